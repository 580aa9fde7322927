use super::{MMModel, ThetaState, VariationalState};
use crate::data::CountMatrix;
use crate::error::{Error, Result};
use crate::expfam::{self, ConjugateFamily};
use crate::special::{digamma_unchecked, ln_gamma_unchecked};

/// Evidence lower bound `E_q[log p] − E_q[log q]`.
///
/// Bayes mode bounds `log p(x | δ, η, ν)`; nuisance mode bounds
/// `log p(x | δ, θ̂)` with θ̂ entering the data term directly and the
/// prior/`q3` terms dropped.
pub fn elbo<F: ConjugateFamily>(
    state: &VariationalState<F::Param>,
    x: &CountMatrix,
    model: &MMModel<F>,
) -> Result<f64> {
    let family = &model.family;
    let delta = model.delta();
    let (n_obs, n_attr, n_prof) = state.phi.dim();
    if (n_obs, n_attr) != (x.n_rows(), x.n_cols()) || state.gamma.dim() != (n_obs, n_prof) || delta.len() != n_prof {
        return Err(Error::Shape("state does not match data or model".into()));
    }

    // data term: per-(g, m) expected log density pieces
    let mut log_k = vec![0.0; n_prof * n_attr];
    let mut natural = Vec::with_capacity(n_prof * n_attr);
    let mut theta_term = 0.0;
    match &state.theta {
        ThetaState::Point(hat) => {
            for ((g, m), theta) in hat.indexed_iter() {
                let theta = family.floor_param(theta);
                family.check_param(&theta)?;
                log_k[g * n_attr + m] = family.log_k(&theta);
                natural.push(family.natural_params(&theta));
            }
        }
        ThetaState::Posterior(post) => {
            for ((g, m), q) in post.indexed_iter() {
                family.check_hyper(q)?;
                let e_log_k = family.expected_log_k(q);
                let e_nat = family.expected_natural_params(q);
                let p = model.prior().get(g, m);
                // E[log p5] − E[log q3]
                theta_term += family.log_prior_normalizer(p) + p.eta * e_log_k + expfam::dot(&p.nu, &e_nat)
                    - family.log_prior_normalizer(q)
                    - q.eta * e_log_k
                    - expfam::dot(&q.nu, &e_nat);
                log_k[g * n_attr + m] = e_log_k;
                natural.push(e_nat);
            }
        }
    }

    let ln_gamma_delta: f64 = delta.iter().map(|d| ln_gamma_unchecked(*d)).sum();
    let ln_gamma_delta_sum = ln_gamma_unchecked(delta.iter().sum());

    let mut total = theta_term;
    let mut e_log_tau = vec![0.0; n_prof];
    for n in 0..n_obs {
        let gamma_n = state.gamma.row(n);
        let gamma_sum: f64 = gamma_n.sum();
        let psi_sum = digamma_unchecked(gamma_sum);
        for (g, e) in e_log_tau.iter_mut().enumerate() {
            *e = digamma_unchecked(gamma_n[g]) - psi_sum;
        }

        // E[log p4] − E[log q1]
        total += ln_gamma_delta_sum - ln_gamma_delta - ln_gamma_unchecked(gamma_sum);
        for g in 0..n_prof {
            total += ln_gamma_unchecked(gamma_n[g]) + (delta[g] - gamma_n[g]) * e_log_tau[g];
        }

        for m in 0..n_attr {
            let xv = x.get(n, m);
            let stats = family.sufficient_stats(xv);
            let base = family.log_base_measure(xv);
            for g in 0..n_prof {
                let p = state.phi[[n, m, g]];
                if p == 0.0 {
                    continue;
                }
                let cell = g * n_attr + m;
                let ell = base + log_k[cell] + expfam::dot(&natural[cell], &stats);
                // E[log p2] + E[log p3] − E[log q2]
                total += p * (ell + e_log_tau[g] - p.ln());
            }
        }
    }

    if !total.is_finite() {
        return Err(Error::NonFinite(format!("ELBO evaluated to {total}")));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::{log_density, PoissonGamma};
    use crate::vb::{update_gamma, update_phi, update_theta, InferenceMode};
    use ndarray::Array3;

    #[test]
    fn single_profile_reduces_to_log_likelihood() {
        let pg = PoissonGamma::default();
        let x = CountMatrix::from_rows(&[vec![0, 3, 5], vec![2, 2, 9]]).unwrap();
        for delta in [0.3, 1.0, 7.5] {
            let model = MMModel::new(
                pg,
                vec![delta],
                super::super::PriorSpec::Shared(pg.prior()),
                InferenceMode::Nuisance,
            )
            .unwrap();
            let phi = Array3::from_elem((2, 3, 1), 1.0);
            let gamma = update_gamma(&phi, model.delta()).unwrap();
            let theta = update_theta(&phi, &x, &model).unwrap();
            let state = VariationalState { gamma, phi, theta };
            let hat = state.theta_hat().unwrap().clone();
            let mut want = 0.0;
            for n in 0..2 {
                for m in 0..3 {
                    want += log_density(&pg, x.get(n, m), &hat[[0, m]]).unwrap();
                }
            }
            let got = elbo(&state, &x, &model).unwrap();
            assert!((got - want).abs() < 1e-10, "delta={delta}: {got} vs {want}");
        }
    }

    #[test]
    fn phi_update_is_the_coordinate_maximizer() {
        // perturbing φ away from its update can only lower the bound
        let pg = PoissonGamma::default();
        let x = CountMatrix::from_rows(&[vec![0, 4], vec![7, 1], vec![3, 3]]).unwrap();
        for mode in [InferenceMode::Bayes, InferenceMode::Nuisance] {
            let model = MMModel::poisson(2, mode, pg).unwrap();
            let mut phi = Array3::from_elem((3, 2, 2), 0.5);
            phi[[0, 0, 0]] = 0.9;
            phi[[0, 0, 1]] = 0.1;
            let gamma = update_gamma(&phi, model.delta()).unwrap();
            let theta = update_theta(&phi, &x, &model).unwrap();
            let mut state = VariationalState { gamma, phi, theta };
            state.phi = update_phi(&state, &x, &model).unwrap();
            let best = elbo(&state, &x, &model).unwrap();
            for eps in [1e-3, -1e-3, 0.05] {
                let mut moved = state.clone();
                let p = (moved.phi[[1, 1, 0]] + eps).clamp(1e-9, 1.0 - 1e-9);
                moved.phi[[1, 1, 0]] = p;
                moved.phi[[1, 1, 1]] = 1.0 - p;
                assert!(elbo(&moved, &x, &model).unwrap() <= best + 1e-12);
            }
        }
    }
}

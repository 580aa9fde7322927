use ndarray::{Array2, Array3, Axis};

use super::{MMModel, PriorSpec, ThetaState, VariationalState};
use crate::data::CountMatrix;
use crate::error::{Error, Result};
use crate::expfam::{self, ConjugateFamily, ConjugatePrior};
use crate::special::{digamma_unchecked, normalize_log_weights};

/// `γ_ng = Σ_m φ_nmg + δ_g`.
pub fn update_gamma(phi: &Array3<f64>, delta: &[f64]) -> Result<Array2<f64>> {
    let (_, _, g) = phi.dim();
    if g != delta.len() {
        return Err(Error::Shape(format!("phi has {g} profiles, delta has {}", delta.len())));
    }
    let mut gamma = phi.sum_axis(Axis(1));
    for mut row in gamma.rows_mut() {
        for (v, d) in row.iter_mut().zip(delta) {
            *v += d;
        }
    }
    Ok(gamma)
}

/// Per-(g, m) pieces of a log-weight `a_gm + b_gm · s(x)`.
struct CellTerms {
    m: usize,
    dim: usize,
    constant: Vec<f64>,
    natural: Vec<f64>,
}

impl CellTerms {
    fn new(g: usize, m: usize, dim: usize) -> Self {
        Self {
            m,
            dim,
            constant: vec![0.0; g * m],
            natural: vec![0.0; g * m * dim],
        }
    }

    fn set(&mut self, g: usize, m: usize, constant: f64, natural: &[f64]) {
        let cell = g * self.m + m;
        self.constant[cell] = constant;
        self.natural[cell * self.dim..(cell + 1) * self.dim].copy_from_slice(natural);
    }

    #[inline]
    fn eval(&self, g: usize, m: usize, stats: &[f64]) -> f64 {
        let cell = g * self.m + m;
        self.constant[cell] + expfam::dot(&self.natural[cell * self.dim..(cell + 1) * self.dim], stats)
    }
}

fn check_dims<P>(gamma: &Array2<f64>, theta: &Array2<P>, x: &CountMatrix) -> Result<()> {
    let (n, g) = gamma.dim();
    let (tg, tm) = theta.dim();
    if n != x.n_rows() || tg != g || tm != x.n_cols() {
        return Err(Error::Shape(format!(
            "gamma {n}x{g}, theta {tg}x{tm}, data {}x{}",
            x.n_rows(),
            x.n_cols()
        )));
    }
    Ok(())
}

/// Normalizes `a_gm + b_gm · s(x_nm) + Ψ(γ_ng)` over g for every (n, m).
fn phi_from_terms<F: ConjugateFamily>(
    family: &F,
    gamma: &Array2<f64>,
    terms: &CellTerms,
    x: &CountMatrix,
) -> Result<Array3<f64>> {
    let (n_obs, n_prof) = gamma.dim();
    let n_attr = x.n_cols();
    if let Some(bad) = gamma.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Domain(format!("gamma entries must be positive, got {bad}")));
    }
    let psi = gamma.mapv(digamma_unchecked);
    let mut phi = Array3::zeros((n_obs, n_attr, n_prof));
    let mut logw = vec![0.0; n_prof];
    for n in 0..n_obs {
        for m in 0..n_attr {
            let stats = family.sufficient_stats(x.get(n, m));
            for (g, w) in logw.iter_mut().enumerate() {
                *w = terms.eval(g, m, &stats) + psi[[n, g]];
            }
            normalize_log_weights(&mut logw)?;
            for (g, w) in logw.iter().enumerate() {
                phi[[n, m, g]] = *w;
            }
        }
    }
    Ok(phi)
}

/// `φ_nmg ∝ exp{E[log k(θ_gm)] + E[r(θ_gm)]·s(x_nm) + Ψ(γ_ng)}`.
///
/// `−Ψ(Σ_h γ_nh)` and `log h(x)` are constant in g and are dropped.
pub fn update_phi_bayes<F: ConjugateFamily>(
    gamma: &Array2<f64>,
    theta_post: &Array2<ConjugatePrior>,
    x: &CountMatrix,
    family: &F,
) -> Result<Array3<f64>> {
    check_dims(gamma, theta_post, x)?;
    let (g, m) = theta_post.dim();
    let mut terms = CellTerms::new(g, m, family.stat_dim());
    for ((gi, mi), post) in theta_post.indexed_iter() {
        family.check_hyper(post)?;
        terms.set(gi, mi, family.expected_log_k(post), &family.expected_natural_params(post));
    }
    phi_from_terms(family, gamma, &terms, x)
}

/// `φ_nmg ∝ p(x_nm | θ̂_gm) exp{Ψ(γ_ng)}`, with θ̂ floored before use.
pub fn update_phi_nuisance<F: ConjugateFamily>(
    gamma: &Array2<f64>,
    theta_hat: &Array2<F::Param>,
    x: &CountMatrix,
    family: &F,
) -> Result<Array3<f64>> {
    check_dims(gamma, theta_hat, x)?;
    let (g, m) = theta_hat.dim();
    let mut terms = CellTerms::new(g, m, family.stat_dim());
    for ((gi, mi), theta) in theta_hat.indexed_iter() {
        let theta = family.floor_param(theta);
        family.check_param(&theta)?;
        terms.set(gi, mi, family.log_k(&theta), &family.natural_params(&theta));
    }
    phi_from_terms(family, gamma, &terms, x)
}

fn check_phi(phi: &Array3<f64>, x: &CountMatrix) -> Result<()> {
    let (n, m, _) = phi.dim();
    if n != x.n_rows() || m != x.n_cols() {
        return Err(Error::Shape(format!(
            "phi is {n}x{m}, data is {}x{}",
            x.n_rows(),
            x.n_cols()
        )));
    }
    Ok(())
}

/// `η′_gm = Σ_n φ_nmg + η_gm`, `ν′_gm = Σ_n φ_nmg s(x_nm) + ν_gm`.
pub fn update_theta_bayes<F: ConjugateFamily>(
    phi: &Array3<f64>,
    x: &CountMatrix,
    prior: &PriorSpec,
    family: &F,
) -> Result<Array2<ConjugatePrior>> {
    check_phi(phi, x)?;
    let (_, n_attr, n_prof) = phi.dim();
    let mut cells = Vec::with_capacity(n_prof * n_attr);
    for g in 0..n_prof {
        for m in 0..n_attr {
            let weights = phi.slice(ndarray::s![.., m, g]).to_vec();
            cells.push(expfam::posterior_update(family, prior.get(g, m), &weights, &x.column(m))?);
        }
    }
    Array2::from_shape_vec((n_prof, n_attr), cells).map_err(|e| Error::Shape(e.to_string()))
}

/// `θ̂_gm` = weighted MLE of column m under profile g's responsibilities.
/// Profiles with no weight fall back to the column MLE; results are floored.
pub fn update_theta_nuisance<F: ConjugateFamily>(
    phi: &Array3<f64>,
    x: &CountMatrix,
    family: &F,
) -> Result<Array2<F::Param>> {
    check_phi(phi, x)?;
    let (_, n_attr, n_prof) = phi.dim();
    let columns: Vec<Vec<u64>> = (0..n_attr).map(|m| x.column(m)).collect();
    let mut cells = Vec::with_capacity(n_prof * n_attr);
    for g in 0..n_prof {
        for (m, col) in columns.iter().enumerate() {
            let weights = phi.slice(ndarray::s![.., m, g]).to_vec();
            let theta = match expfam::mle_from_weighted_stats(family, &weights, col) {
                Ok(t) => t,
                Err(Error::DegenerateWeights { .. }) => expfam::column_mle(family, col)?,
                Err(e) => return Err(e),
            };
            cells.push(family.floor_param(&theta));
        }
    }
    Array2::from_shape_vec((n_prof, n_attr), cells).map_err(|e| Error::Shape(e.to_string()))
}

/// φ update for whichever θ representation the state holds.
pub fn update_phi<F: ConjugateFamily>(
    state: &VariationalState<F::Param>,
    x: &CountMatrix,
    model: &MMModel<F>,
) -> Result<Array3<f64>> {
    match &state.theta {
        ThetaState::Posterior(post) => update_phi_bayes(&state.gamma, post, x, &model.family),
        ThetaState::Point(hat) => update_phi_nuisance(&state.gamma, hat, x, &model.family),
    }
}

/// θ update in the model's inference mode.
pub fn update_theta<F: ConjugateFamily>(
    phi: &Array3<f64>,
    x: &CountMatrix,
    model: &MMModel<F>,
) -> Result<ThetaState<F::Param>> {
    Ok(match model.mode() {
        super::InferenceMode::Bayes => ThetaState::Posterior(update_theta_bayes(phi, x, model.prior(), &model.family)?),
        super::InferenceMode::Nuisance => ThetaState::Point(update_theta_nuisance(phi, x, &model.family)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::{gamma_hyper, PoissonGamma, RATE_FLOOR};
    use crate::special::digamma;
    use ndarray::{array, Array3};

    const PG: PoissonGamma = PoissonGamma {
        alpha: 0.01,
        beta: 0.01,
    };

    fn single(x: u64) -> CountMatrix {
        CountMatrix::from_rows(&[vec![x]]).unwrap()
    }

    #[test]
    fn gamma_direct_sum() {
        let mut phi = Array3::zeros((1, 2, 2));
        phi[[0, 0, 0]] = 0.5;
        phi[[0, 0, 1]] = 0.5;
        phi[[0, 1, 0]] = 1.0;
        let gamma = update_gamma(&phi, &[0.5, 0.5]).unwrap();
        assert_eq!(gamma, array![[2.0, 1.0]]);
    }

    #[test]
    fn gamma_degenerate_membership() {
        let (m, g) = (5, 4);
        let mut phi = Array3::zeros((2, m, g));
        phi.slice_mut(ndarray::s![.., .., 0]).fill(1.0);
        let delta = vec![1.0 / g as f64; g];
        let gamma = update_gamma(&phi, &delta).unwrap();
        for row in gamma.rows() {
            assert_eq!(row[0], m as f64 + 0.25);
            assert!(row.iter().skip(1).all(|v| *v == 0.25));
        }
    }

    #[test]
    fn gamma_uniform_phi_is_symmetric() {
        let phi = Array3::from_elem((3, 4, 3), 1.0 / 3.0);
        let gamma = update_gamma(&phi, &[0.2, 0.2, 0.2]).unwrap();
        for row in gamma.rows() {
            assert!(row.iter().all(|v| *v == row[0]));
        }
        assert!(update_gamma(&phi, &[1.0]).is_err());
    }

    #[test]
    fn phi_single_profile() {
        let x = CountMatrix::from_rows(&[vec![0, 3], vec![7, 1]]).unwrap();
        let gamma = Array2::from_elem((2, 1), 2.5);
        let post = Array2::from_elem((1, 2), gamma_hyper(3.0, 1.0));
        let phi = update_phi_bayes(&gamma, &post, &x, &PG).unwrap();
        assert!(phi.iter().all(|v| *v == 1.0));
        let hat = Array2::from_elem((1, 2), 2.0);
        let phi = update_phi_nuisance(&gamma, &hat, &x, &PG).unwrap();
        assert!(phi.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn phi_symmetric_profiles_split_evenly() {
        let x = single(4);
        let gamma = array![[1.3, 1.3]];
        let post = Array2::from_elem((2, 1), gamma_hyper(2.0, 0.5));
        let phi = update_phi_bayes(&gamma, &post, &x, &PG).unwrap();
        assert_eq!(phi[[0, 0, 0]], 0.5);
        assert_eq!(phi[[0, 0, 1]], 0.5);
        let hat = array![[3.0], [3.0]];
        let phi = update_phi_nuisance(&gamma, &hat, &x, &PG).unwrap();
        assert_eq!(phi[[0, 0, 0]], 0.5);
    }

    #[test]
    fn phi_bayes_prefers_matching_rate() {
        // x = 3; Gamma posteriors with mean 1 (η′=1, ν′=0) and mean 5 (η′=1, ν′=4).
        let x = single(3);
        let gamma = array![[1.0, 1.0]];
        let post = array![[ConjugatePrior::new(1.0, vec![0.0])], [ConjugatePrior::new(1.0, vec![4.0])]];
        let phi = update_phi_bayes(&gamma, &post, &x, &PG).unwrap();

        // scalar re-evaluation: −(ν′+1)/η′ + (Ψ(ν′+1) − ln η′)·x
        let w1 = -1.0 + (digamma(1.0).unwrap()) * 3.0;
        let w2 = -5.0 + (digamma(5.0).unwrap()) * 3.0;
        let want = w2.exp() / (w1.exp() + w2.exp());
        assert!((phi[[0, 0, 1]] - want).abs() < 1e-14);
        assert!(phi[[0, 0, 1]] > 0.9);
        assert!((want - 0.904_650).abs() < 1e-5, "{want}");
    }

    #[test]
    fn phi_nuisance_zero_count() {
        let x = single(0);
        let gamma = array![[0.7, 0.7]];
        let hat = array![[1.0], [5.0]];
        let phi = update_phi_nuisance(&gamma, &hat, &x, &PG).unwrap();
        let e1 = (-1f64).exp();
        let e5 = (-5f64).exp();
        assert!((phi[[0, 0, 0]] - e1 / (e1 + e5)).abs() < 1e-14);
        assert!((phi[[0, 0, 0]] - 0.98201).abs() < 1e-5);
    }

    #[test]
    fn phi_nuisance_floors_zero_rates() {
        let x = single(2);
        let gamma = array![[1.0, 1.0]];
        let hat = array![[0.0], [1.0]];
        let phi = update_phi_nuisance(&gamma, &hat, &x, &PG).unwrap();
        assert!(phi.iter().all(|v| v.is_finite()));
        assert!(phi[[0, 0, 1]] > 0.999_999);
    }

    #[test]
    fn phi_shape_errors() {
        let x = single(1);
        let gamma = array![[1.0, 1.0]];
        let hat = array![[1.0, 1.0], [1.0, 1.0]];
        assert!(matches!(update_phi_nuisance(&gamma, &hat, &x, &PG), Err(Error::Shape(_))));
    }

    #[test]
    fn theta_bayes_without_evidence_is_prior() {
        let x = CountMatrix::from_rows(&[vec![3, 5], vec![1, 0]]).unwrap();
        let mut phi = Array3::zeros((2, 2, 2));
        phi.slice_mut(ndarray::s![.., .., 0]).fill(1.0);
        let prior = PriorSpec::Shared(PG.prior());
        let post = update_theta_bayes(&phi, &x, &prior, &PG).unwrap();
        assert_eq!(post[[1, 0]], PG.prior());
        assert_eq!(post[[1, 1]], PG.prior());
        assert!((post[[0, 0]].eta - 2.01).abs() < 1e-14);
        assert!((post[[0, 0]].nu[0] - (4.0 - 0.99)).abs() < 1e-14);
    }

    #[test]
    fn theta_bayes_single_observation() {
        let pg = PoissonGamma::new(2.0, 0.5).unwrap();
        let x = single(6);
        let phi = Array3::from_elem((1, 1, 1), 1.0);
        let post = update_theta_bayes(&phi, &x, &PriorSpec::Shared(pg.prior()), &pg).unwrap();
        assert_eq!(post[[0, 0]].eta, 1.5);
        assert_eq!(post[[0, 0]].nu[0], 6.0 + 2.0 - 1.0);
    }

    #[test]
    fn theta_nuisance_examples_and_fallback() {
        let x = CountMatrix::from_rows(&[vec![1], vec![2], vec![3]]).unwrap();
        let mut phi = Array3::zeros((3, 1, 2));
        phi.slice_mut(ndarray::s![.., .., 0]).fill(1.0);
        let hat = update_theta_nuisance(&phi, &x, &PG).unwrap();
        assert_eq!(hat[[0, 0]], 2.0);
        // profile 2 has no weight: global column mean
        assert_eq!(hat[[1, 0]], 2.0);

        let x = CountMatrix::from_rows(&[vec![5], vec![100]]).unwrap();
        let phi = Array3::from_shape_vec((2, 1, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let hat = update_theta_nuisance(&phi, &x, &PG).unwrap();
        assert_eq!(hat[[0, 0]], 5.0);
        assert_eq!(hat[[1, 0]], 100.0);

        let x = CountMatrix::from_rows(&[vec![0], vec![4]]).unwrap();
        let phi = Array3::from_shape_vec((2, 1, 1), vec![0.25, 0.75]).unwrap();
        let hat = update_theta_nuisance(&phi, &x, &PG).unwrap();
        assert_eq!(hat[[0, 0]], 3.0);
    }

    #[test]
    fn theta_nuisance_floors_zero_columns() {
        let x = CountMatrix::from_rows(&[vec![0], vec![0]]).unwrap();
        let phi = Array3::from_elem((2, 1, 1), 1.0);
        let hat = update_theta_nuisance(&phi, &x, &PG).unwrap();
        assert_eq!(hat[[0, 0]], RATE_FLOOR);
    }
}

mod common;

use mixmem::evaluate::align_labels;
use mixmem::sampling::rng_for;
use mixmem::select::{holdout_loglik_mc, McConfig};
use mixmem::vb::{self, elbo, fit, fit_from, initial_phi, update_gamma, update_phi, update_theta, FitConfig, InferenceMode, InitScheme, MMModel};
use mixmem::{CountMatrix, PoissonGamma};
use ndarray::{array, Array2, Axis};
use proptest::prelude::*;

const PG: PoissonGamma = PoissonGamma { alpha: 0.01, beta: 0.01 };

fn max_rel_change(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(1e-12))
        .fold(0.0, f64::max)
}

#[test]
fn converged_state_is_a_fixed_point() {
    let (sim, _) = common::three_profile_data(4);
    let tol = 1e-12;
    for mode in [InferenceMode::Nuisance, InferenceMode::Bayes] {
        let model = MMModel::poisson(3, mode, PG).unwrap();
        let cfg = FitConfig { restarts: 2, elbo_rel_tolerance: tol, max_iterations: 5000, seed: 4, ..Default::default() };
        let result = fit(&sim.data, &model, &cfg).unwrap();
        assert!(result.converged);
        let state = &result.state;

        let phi = update_phi(state, &sim.data, &model).unwrap();
        let gamma = update_gamma(&phi, model.delta()).unwrap();
        let theta = update_theta(&phi, &sim.data, &model).unwrap();
        let next = vb::VariationalState { gamma, phi, theta };

        let (before, after) = (elbo(state, &sim.data, &model).unwrap(), elbo(&next, &sim.data, &model).unwrap());
        assert!(after >= before - 1e-9 * before.abs(), "{mode:?}: {before} -> {after}");
        assert!(after - before <= tol * before.abs(), "{mode:?}: {before} -> {after}");

        // ELBO is flat to second order, so parameters move by O(sqrt(tol))
        let phi_change = next.phi.iter().zip(&state.phi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(phi_change <= 1e-3, "{mode:?}: phi moved by {phi_change}");
        assert!(max_rel_change(&state.gamma, &next.gamma) <= 1e-3);
        assert!(max_rel_change(&state.rates(&PG), &next.rates(&PG)) <= 1e-3, "{mode:?}");
    }
}

#[test]
fn permuted_initialization_permutes_the_fit() {
    let x = common::random_instance(31, 40, 6, 3);
    let model = MMModel::poisson(3, InferenceMode::Nuisance, PG).unwrap();
    let cfg = FitConfig { restarts: 1, ..Default::default() };
    let phi0 = initial_phi(x.n_rows(), x.n_cols(), 3, InitScheme::DirichletPhi, &mut rng_for(5, 0)).unwrap();
    let perm = [2usize, 0, 1];
    let phi0_perm = phi0.select(Axis(2), &perm);

    let a = fit_from(&x, &model, &cfg, phi0).unwrap();
    let b = fit_from(&x, &model.permuted(&perm), &cfg, phi0_perm).unwrap();
    assert_eq!(a.iterations, b.iterations);
    let close = |u: f64, v: f64| (u - v).abs() <= 1e-9 * u.abs().max(1.0);
    for (k, &p) in perm.iter().enumerate() {
        for n in 0..x.n_rows() {
            assert!(close(b.state.gamma[[n, k]], a.state.gamma[[n, p]]));
            for m in 0..x.n_cols() {
                assert!(close(b.state.phi[[n, m, k]], a.state.phi[[n, m, p]]));
            }
        }
        let (ra, rb) = (a.state.rates(&PG), b.state.rates(&PG));
        for m in 0..x.n_cols() {
            assert!(close(rb[[k, m]], ra[[p, m]]));
        }
    }
    assert!(close(a.final_elbo(), b.final_elbo()));
}

#[test]
fn bayes_and_nuisance_rates_agree_on_separated_data() {
    let (sim, truth) = common::three_profile_data(8);
    let cfg = FitConfig { seed: 8, ..Default::default() };
    let bayes = fit(&sim.data, &MMModel::poisson(3, InferenceMode::Bayes, PG).unwrap(), &cfg).unwrap();
    let nuis = fit(&sim.data, &MMModel::poisson(3, InferenceMode::Nuisance, PG).unwrap(), &cfg).unwrap();
    let rb = bayes.state.rates(&PG);
    let rn = nuis.state.rates(&PG);
    let pb = align_labels(&rb, &truth).unwrap();
    let pn = align_labels(&rn, &truth).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..3 {
        for m in 0..truth.ncols() {
            let (b, n) = (rb[[pb[k], m]], rn[[pn[k], m]]);
            worst = worst.max((b - n).abs() / n);
        }
    }
    assert!(worst <= 0.05, "largest relative gap {worst}");
}

#[test]
fn monte_carlo_error_shrinks_as_root_t() {
    let x = CountMatrix::from_rows(&[vec![0, 4, 11], vec![7, 2, 1], vec![3, 3, 9]]).unwrap();
    let theta = array![[1.5, 4.0, 12.0], [6.0, 2.0, 2.5]];
    let delta = [0.5, 0.5];
    let draws = [100usize, 1_000, 10_000, 100_000];
    let mut points = Vec::new();
    for &t in &draws {
        let values: Vec<f64> = (0..30u64)
            .map(|seed| holdout_loglik_mc(&PG, &x, &theta, &delta, &McConfig { draws: t, seed, ..Default::default() }).unwrap())
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
        points.push(((t as f64).ln(), 0.5 * var.ln()));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let my = points.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() <= 0.15, "slope {slope}");
}

#[test]
fn fits_are_reproducible() {
    let x = common::random_instance(77, 30, 5, 2);
    let model = MMModel::poisson(2, InferenceMode::Bayes, PG).unwrap();
    let cfg = FitConfig { restarts: 4, seed: 123, ..Default::default() };
    let a = fit(&x, &model, &cfg).unwrap();
    let b = fit(&x, &model, &cfg).unwrap();
    assert_eq!(a.state, b.state);
    assert_eq!(a.elbo_trace, b.elbo_trace);
    let c = fit(&x, &model, &FitConfig { threads: 2, ..cfg }).unwrap();
    assert_eq!(a.state, c.state);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn updates_keep_simplex_and_gamma_identity(seed in 0u64..10_000, g in 1usize..5, bayes in any::<bool>()) {
        let x = common::random_instance(seed, 20, 6, g);
        let mode = if bayes { InferenceMode::Bayes } else { InferenceMode::Nuisance };
        let model = MMModel::poisson(g, mode, PG).unwrap();
        let cfg = FitConfig { restarts: 1, max_iterations: 5, seed, ..Default::default() };
        let state = fit(&x, &model, &cfg).unwrap().state;
        let phi = update_phi(&state, &x, &model).unwrap();
        for row in phi.lanes(Axis(2)) {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
        let gamma = update_gamma(&phi, model.delta()).unwrap();
        let summed = phi.sum_axis(Axis(1));
        for ((n, k), v) in gamma.indexed_iter() {
            prop_assert!((v - model.delta()[k] - summed[[n, k]]).abs() <= 1e-12);
        }
    }
}

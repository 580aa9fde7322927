#![allow(dead_code)]

use mixmem::cli::jittered_rates;
use mixmem::sampling::rng_for;
use mixmem::vb::{self, Simulation};
use mixmem::{CountMatrix, PoissonGamma};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

/// Three profiles with base rates 2, 6 and 18, ±20% per attribute,
/// δ = 1/3, N = 300, M = 24.
pub fn three_profile_data(seed: u64) -> (Simulation, Array2<f64>) {
    let rates = jittered_rates(&[2.0, 6.0, 18.0], 24, 0.2, seed).unwrap();
    let sim = vb::generate(300, &PoissonGamma::default(), &rates, &[1.0 / 3.0; 3], seed).unwrap();
    (sim, rates)
}

/// A small random mixed membership dataset with rates in [0.5, 20].
pub fn random_instance(seed: u64, max_n: usize, max_m: usize, n_prof: usize) -> CountMatrix {
    let mut rng = rng_for(seed, 7);
    let n = rng.random_range(2..=max_n);
    let m = rng.random_range(1..=max_m);
    let rates = Array2::from_shape_fn((n_prof, m), |_| rng.random_range(0.5..20.0));
    let delta: Vec<f64> = (0..n_prof).map(|_| rng.random_range(0.2..2.0)).collect();
    vb::generate(n, &PoissonGamma::default(), &rates, &delta, seed).unwrap().data
}

/// Draws from a finite Poisson mixture; returns data and group labels.
pub fn mixture_data(seed: u64, n: usize, weights: &[f64], rates: &Array2<f64>) -> (CountMatrix, Vec<usize>) {
    let mut rng = rng_for(seed, 9);
    let mut labels = Vec::with_capacity(n);
    let mut values = Array2::zeros((n, rates.ncols()));
    for i in 0..n {
        let g = mixmem::sampling::categorical(weights, &mut rng);
        labels.push(g);
        for m in 0..rates.ncols() {
            values[[i, m]] = Poisson::new(rates[[g, m]]).unwrap().sample(&mut rng) as u64;
        }
    }
    (CountMatrix::from_values(values).unwrap(), labels)
}

/// Euler–Maclaurin digamma: shift to x + k ≥ 60 with compensated summation
/// of the reciprocals, then ten terms of the asymptotic series.
pub fn digamma_oracle(x: f64) -> f64 {
    const B: [f64; 10] = [
        1.0 / 6.0,
        -1.0 / 30.0,
        1.0 / 42.0,
        -1.0 / 30.0,
        5.0 / 66.0,
        -691.0 / 2730.0,
        7.0 / 6.0,
        -3617.0 / 510.0,
        43867.0 / 798.0,
        -174611.0 / 330.0,
    ];
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut z = x;
    while z < 60.0 {
        let y = -1.0 / z - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        z += 1.0;
    }
    let mut series = 0.0;
    for (k, b) in B.iter().enumerate().rev() {
        let two_k = 2.0 * (k as f64 + 1.0);
        series += b / (two_k * z.powf(two_k));
    }
    sum + (z.ln() - 0.5 / z - series)
}

/// High-precision reference values of Ψ at decimal arguments.
pub const DIGAMMA_REFERENCE: [(f64, f64); 11] = [
    (0.001, -1000.575571931810300471473),
    (0.1, -10.42375494041107679516822),
    (0.5, -1.963510026021423479440976),
    (1.0, -0.5772156649015328606065121),
    (2.5, 0.7031566406452431872256903),
    (7.25, 1.910453526883736028382495),
    (10.0, 2.251752589066721107647456),
    (123.456, 4.811829323828985387322188),
    (1000.0, 6.907255195648812052050006),
    (31622.7766, 10.36161710694832434095093),
    (1e6, 13.81551005796419077077462),
];

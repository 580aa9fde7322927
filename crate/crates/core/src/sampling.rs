//! Seeded random draws shared by initialization, simulation and Monte Carlo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Open01};

use crate::error::{Error, Result};
use crate::special::log_sum_exp;

/// Generator for run `stream` under a master seed. Different streams of the
/// same seed are independent.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for row `index` of a sweep: `seed ⊕ index`.
pub fn row_seed(seed: u64, index: u64) -> u64 {
    seed ^ index
}

/// Log of a Gamma(shape, 1) draw. Shapes below one use
/// `G(a) = G(a + 1) · U^{1/a}` so the log stays finite for tiny shapes.
fn log_gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("positive shape");
        g.sample(rng).ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("positive shape");
        let u: f64 = Open01.sample(rng);
        g.sample(rng).ln() + u.ln() / shape
    }
}

/// One draw from Dirichlet(alpha).
pub fn dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if alpha.is_empty() || alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
        return Err(Error::Domain(format!("Dirichlet parameters must be positive, got {alpha:?}")));
    }
    let logs: Vec<f64> = alpha.iter().map(|&a| log_gamma_draw(a, rng)).collect();
    let norm = log_sum_exp(&logs);
    Ok(logs.iter().map(|l| (l - norm).exp()).collect())
}

/// Index drawn from a probability vector; the last index absorbs rounding.
pub fn categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

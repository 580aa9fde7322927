//! Exponential-family component distributions with conjugate priors.
//!
//! A component density is written `h(x) k(θ) exp{r(θ)·s(x)}` and its conjugate
//! prior `h(η, ν) k(θ)^η exp{r(θ)·ν}`. The variational engine only talks to
//! the [`ConjugateFamily`] trait; [`PoissonGamma`] is the shipped instance.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{digamma_unchecked, ln_factorial, ln_gamma_unchecked};

/// Total weight below which a weighted MLE is considered undefined.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// Smallest rate used wherever `log θ` is taken.
pub const RATE_FLOOR: f64 = 1e-10;

/// Hyperparameters `(η, ν)` of a conjugate prior or of its variational
/// counterpart `(η′, ν′)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugatePrior {
    pub eta: f64,
    pub nu: Vec<f64>,
}

impl ConjugatePrior {
    pub fn new(eta: f64, nu: Vec<f64>) -> Self {
        Self { eta, nu }
    }
}

/// Contract every component family satisfies.
///
/// Observations are non-negative integers; families over other supports would
/// need a different observation type.
pub trait ConjugateFamily: Clone + fmt::Debug + Send + Sync {
    /// Component parameter θ.
    type Param: Clone + fmt::Debug + PartialEq + Send + Sync;

    /// Dimension shared by `r(θ)` and `s(x)`.
    fn stat_dim(&self) -> usize;

    fn check_param(&self, theta: &Self::Param) -> Result<()>;
    fn check_hyper(&self, hyper: &ConjugatePrior) -> Result<()>;

    /// `log h(x)`.
    fn log_base_measure(&self, x: u64) -> f64;
    /// `log k(θ)`.
    fn log_k(&self, theta: &Self::Param) -> f64;
    /// `r(θ)`.
    fn natural_params(&self, theta: &Self::Param) -> Vec<f64>;
    /// `s(x)`.
    fn sufficient_stats(&self, x: u64) -> Vec<f64>;

    /// `log h(η, ν)`, the log normalizer of the conjugate density.
    fn log_prior_normalizer(&self, hyper: &ConjugatePrior) -> f64;
    /// `E[log k(θ)]` under the conjugate density with the given hyperparameters.
    fn expected_log_k(&self, hyper: &ConjugatePrior) -> f64;
    /// `E[r(θ)]` under the conjugate density.
    fn expected_natural_params(&self, hyper: &ConjugatePrior) -> Vec<f64>;
    /// Posterior mean of θ, for reporting.
    fn posterior_mean(&self, hyper: &ConjugatePrior) -> Self::Param;

    /// Inverse link: the θ whose expected sufficient statistic equals `mean_stats`.
    fn param_from_mean_stats(&self, mean_stats: &[f64]) -> Result<Self::Param>;
    /// Moves θ into the region where `log k` and `r` are finite.
    fn floor_param(&self, theta: &Self::Param) -> Self::Param;

    fn sample<R: Rng + ?Sized>(&self, theta: &Self::Param, rng: &mut R) -> u64;
}

/// `log p(x | θ) = log h(x) + log k(θ) + r(θ)·s(x)`.
pub fn log_density<F: ConjugateFamily>(family: &F, x: u64, theta: &F::Param) -> Result<f64> {
    family.check_param(theta)?;
    Ok(family.log_base_measure(x) + family.log_k(theta) + dot(&family.natural_params(theta), &family.sufficient_stats(x)))
}

/// `E_q[log p(x | θ)]` under conjugate hyperparameters `(η′, ν′)`.
///
/// With `include_base = false` the `log h(x)` term is left out, which is the
/// form the φ update uses since it does not depend on the profile.
pub fn expected_log_density<F: ConjugateFamily>(
    family: &F,
    x: u64,
    posterior: &ConjugatePrior,
    include_base: bool,
) -> Result<f64> {
    family.check_hyper(posterior)?;
    let base = if include_base {
        family.log_base_measure(x)
    } else {
        0.0
    };
    Ok(base
        + family.expected_log_k(posterior)
        + dot(&family.expected_natural_params(posterior), &family.sufficient_stats(x)))
}

/// `η′ = Σ φ + η`, `ν′ = Σ φ s(x) + ν`.
pub fn posterior_update<F: ConjugateFamily>(
    family: &F,
    prior: &ConjugatePrior,
    weights: &[f64],
    data: &[u64],
) -> Result<ConjugatePrior> {
    if weights.len() != data.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} observations",
            weights.len(),
            data.len()
        )));
    }
    family.check_hyper(prior)?;
    let mut eta = prior.eta;
    let mut nu = prior.nu.clone();
    for (&w, &x) in weights.iter().zip(data) {
        if w == 0.0 {
            continue;
        }
        eta += w;
        for (acc, s) in nu.iter_mut().zip(family.sufficient_stats(x)) {
            *acc += w * s;
        }
    }
    Ok(ConjugatePrior { eta, nu })
}

/// Maximum-likelihood θ from responsibility-weighted observations.
///
/// Fails with [`Error::DegenerateWeights`] when `Σ φ` is below [`WEIGHT_FLOOR`];
/// callers decide the fallback.
pub fn mle_from_weighted_stats<F: ConjugateFamily>(
    family: &F,
    weights: &[f64],
    data: &[u64],
) -> Result<F::Param> {
    if weights.len() != data.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} observations",
            weights.len(),
            data.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if !(total >= WEIGHT_FLOOR) {
        return Err(Error::DegenerateWeights {
            total,
            floor: WEIGHT_FLOOR,
        });
    }
    let mut stats = vec![0.0; family.stat_dim()];
    for (&w, &x) in weights.iter().zip(data) {
        if w == 0.0 {
            continue;
        }
        for (acc, s) in stats.iter_mut().zip(family.sufficient_stats(x)) {
            *acc += w * s;
        }
    }
    stats.iter_mut().for_each(|s| *s /= total);
    family.param_from_mean_stats(&stats)
}

/// Unweighted MLE for a column, the fallback for empty profiles.
pub fn column_mle<F: ConjugateFamily>(family: &F, data: &[u64]) -> Result<F::Param> {
    let ones = vec![1.0; data.len()];
    mle_from_weighted_stats(family, &ones, data)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Poisson observations with a Gamma(α, β) prior on the rate.
///
/// `h(x) = 1/x!`, `k(θ) = e^{−θ}`, `s(x) = x`, `r(θ) = log θ`; the prior maps
/// to `η = β`, `ν = α − 1`, with `h(η, ν) = η^{ν+1} / Γ(ν + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonGamma {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for PoissonGamma {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 0.01,
        }
    }
}

impl PoissonGamma {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::Domain(format!(
                "Gamma prior needs alpha > 0 and beta > 0, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    /// The Gamma(α, β) prior in `(η, ν)` form.
    pub fn prior(&self) -> ConjugatePrior {
        gamma_hyper(self.alpha, self.beta)
    }
}

/// `(η, ν)` for Gamma(shape, rate).
pub fn gamma_hyper(shape: f64, rate: f64) -> ConjugatePrior {
    ConjugatePrior::new(rate, vec![shape - 1.0])
}

impl ConjugateFamily for PoissonGamma {
    type Param = f64;

    fn stat_dim(&self) -> usize {
        1
    }

    fn check_param(&self, theta: &f64) -> Result<()> {
        if *theta > 0.0 && theta.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!("Poisson rate must be positive, got {theta}")))
        }
    }

    fn check_hyper(&self, hyper: &ConjugatePrior) -> Result<()> {
        match hyper.nu.as_slice() {
            [nu] if hyper.eta > 0.0 && *nu > -1.0 && hyper.eta.is_finite() && nu.is_finite() => Ok(()),
            _ => Err(Error::Domain(format!(
                "Gamma hyperparameters need eta > 0 and nu > -1, got eta={} nu={:?}",
                hyper.eta, hyper.nu
            ))),
        }
    }

    fn log_base_measure(&self, x: u64) -> f64 {
        -ln_factorial(x)
    }

    fn log_k(&self, theta: &f64) -> f64 {
        -theta
    }

    fn natural_params(&self, theta: &f64) -> Vec<f64> {
        vec![theta.ln()]
    }

    fn sufficient_stats(&self, x: u64) -> Vec<f64> {
        vec![x as f64]
    }

    fn log_prior_normalizer(&self, hyper: &ConjugatePrior) -> f64 {
        let shape = hyper.nu[0] + 1.0;
        shape * hyper.eta.ln() - ln_gamma_unchecked(shape)
    }

    fn expected_log_k(&self, hyper: &ConjugatePrior) -> f64 {
        -(hyper.nu[0] + 1.0) / hyper.eta
    }

    fn expected_natural_params(&self, hyper: &ConjugatePrior) -> Vec<f64> {
        vec![digamma_unchecked(hyper.nu[0] + 1.0) - hyper.eta.ln()]
    }

    fn posterior_mean(&self, hyper: &ConjugatePrior) -> f64 {
        (hyper.nu[0] + 1.0) / hyper.eta
    }

    fn param_from_mean_stats(&self, mean_stats: &[f64]) -> Result<f64> {
        match mean_stats {
            [m] if *m >= 0.0 && m.is_finite() => Ok(*m),
            _ => Err(Error::Domain(format!(
                "Poisson mean statistic must be a single non-negative value, got {mean_stats:?}"
            ))),
        }
    }

    fn floor_param(&self, theta: &f64) -> f64 {
        theta.max(RATE_FLOOR)
    }

    fn sample<R: Rng + ?Sized>(&self, theta: &f64, rng: &mut R) -> u64 {
        let dist = Poisson::new(*theta).expect("rate validated by caller");
        let draw: f64 = dist.sample(rng);
        draw as u64
    }
}

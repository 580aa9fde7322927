//! Coordinate-ascent variational Bayes for mixed membership models.
//!
//! Each observation `n` carries a Dirichlet membership vector `τ_n`; each of
//! its `M` attributes picks a profile `Z_nm ~ Multinomial(1, τ_n)` and is
//! drawn from that profile's exponential-family component. The variational
//! family factorizes into `q1(τ | γ) q2(Z | φ) q3(θ | η′, ν′)`; in nuisance
//! mode `q3` is replaced by point estimates `θ̂`.

mod elbo;
mod fit;
mod simulate;
mod updates;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

pub use elbo::elbo;
pub use fit::{fit, fit_from, initial_phi, FitConfig, FitResult, InitScheme};
pub use simulate::{generate, Simulation};
pub use updates::{
    update_gamma, update_phi, update_phi_bayes, update_phi_nuisance, update_theta, update_theta_bayes,
    update_theta_nuisance,
};

use crate::error::{Error, Result};
use crate::expfam::{ConjugateFamily, ConjugatePrior, PoissonGamma};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    /// Variational posterior over component parameters.
    Bayes,
    /// Component parameters estimated by maximum likelihood.
    Nuisance,
}

impl std::str::FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bayes" => Ok(Self::Bayes),
            "nuisance" => Ok(Self::Nuisance),
            other => Err(Error::Config(format!("unknown inference mode '{other}'"))),
        }
    }
}

/// Prior hyperparameters, either shared by every (profile, attribute) cell
/// or given per cell as a G × M array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PriorSpec {
    Shared(ConjugatePrior),
    PerCell(Array2<ConjugatePrior>),
}

impl PriorSpec {
    pub fn get(&self, g: usize, m: usize) -> &ConjugatePrior {
        match self {
            PriorSpec::Shared(p) => p,
            PriorSpec::PerCell(cells) => &cells[[g, m]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MMModel<F> {
    pub family: F,
    delta: Vec<f64>,
    prior: PriorSpec,
    mode: InferenceMode,
}

impl<F: ConjugateFamily> MMModel<F> {
    pub fn new(family: F, delta: Vec<f64>, prior: PriorSpec, mode: InferenceMode) -> Result<Self> {
        if delta.is_empty() {
            return Err(Error::Config("at least one profile is required".into()));
        }
        if let Some(bad) = delta.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return Err(Error::Config(format!("Dirichlet hyperparameters must be positive, got {bad}")));
        }
        match &prior {
            PriorSpec::Shared(p) => family.check_hyper(p)?,
            PriorSpec::PerCell(cells) => {
                if cells.nrows() != delta.len() {
                    return Err(Error::Shape(format!(
                        "per-cell prior has {} profiles, model has {}",
                        cells.nrows(),
                        delta.len()
                    )));
                }
                for p in cells {
                    family.check_hyper(p)?;
                }
            }
        }
        Ok(Self {
            family,
            delta,
            prior,
            mode,
        })
    }

    pub fn n_profiles(&self) -> usize {
        self.delta.len()
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn mode(&self) -> InferenceMode {
        self.mode
    }

    /// The same model with profiles reordered: new profile `k` is old `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let prior = match &self.prior {
            PriorSpec::Shared(p) => PriorSpec::Shared(p.clone()),
            PriorSpec::PerCell(cells) => PriorSpec::PerCell(cells.select(ndarray::Axis(0), perm)),
        };
        Self {
            family: self.family.clone(),
            delta: perm.iter().map(|&g| self.delta[g]).collect(),
            prior,
            mode: self.mode,
        }
    }
}

impl MMModel<PoissonGamma> {
    /// Poisson profiles with a shared Gamma prior and `δ_g = 1/G`.
    pub fn poisson(n_profiles: usize, mode: InferenceMode, family: PoissonGamma) -> Result<Self> {
        if n_profiles == 0 {
            return Err(Error::Config("at least one profile is required".into()));
        }
        let delta = vec![1.0 / n_profiles as f64; n_profiles];
        Self::new(family, delta, PriorSpec::Shared(family.prior()), mode)
    }
}

/// Component parameters: a variational posterior per (profile, attribute)
/// in Bayes mode, a point estimate in nuisance mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ThetaState<P> {
    Posterior(Array2<ConjugatePrior>),
    Point(Array2<P>),
}

/// Free variational parameters: `γ` (N × G), `φ` (N × M × G) and θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState<P> {
    pub gamma: Array2<f64>,
    pub phi: Array3<f64>,
    pub theta: ThetaState<P>,
}

impl<P: Clone> VariationalState<P> {
    /// Posterior mean memberships `τ̂_n = γ_n / Σ_h γ_nh`.
    pub fn tau_hat(&self) -> Array2<f64> {
        let mut tau = self.gamma.clone();
        for mut row in tau.rows_mut() {
            let total = row.sum();
            row.mapv_inplace(|v| v / total);
        }
        tau
    }

    pub fn theta_posterior(&self) -> Option<&Array2<ConjugatePrior>> {
        match &self.theta {
            ThetaState::Posterior(p) => Some(p),
            ThetaState::Point(_) => None,
        }
    }

    pub fn theta_hat(&self) -> Option<&Array2<P>> {
        match &self.theta {
            ThetaState::Point(p) => Some(p),
            ThetaState::Posterior(_) => None,
        }
    }
}

impl VariationalState<f64> {
    /// Per-cell rate summary: `θ̂` in nuisance mode, `(ν′ + 1)/η′` in Bayes mode.
    pub fn rates<F: ConjugateFamily<Param = f64>>(&self, family: &F) -> Array2<f64> {
        match &self.theta {
            ThetaState::Point(p) => p.clone(),
            ThetaState::Posterior(post) => post.map(|h| family.posterior_mean(h)),
        }
    }
}

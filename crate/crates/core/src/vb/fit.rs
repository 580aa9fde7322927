use ndarray::{Array2, Array3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{elbo, update_gamma, update_phi, update_theta, MMModel, VariationalState};
use crate::data::CountMatrix;
use crate::error::{Error, Result};
use crate::expfam::ConjugateFamily;
use crate::sampling::{dirichlet, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Every `φ_nm·` drawn independently from a symmetric Dirichlet(1).
    DirichletPhi,
    /// One Dirichlet(1) draw per observation, copied to all of its attributes.
    DirichletRow,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dirichlet-phi" => Ok(Self::DirichletPhi),
            "dirichlet-row" => Ok(Self::DirichletRow),
            other => Err(Error::Config(format!("unknown init scheme '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iterations: usize,
    pub elbo_rel_tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
    pub init_scheme: InitScheme,
    /// Worker threads for restarts; 1 runs them in order on the caller.
    pub threads: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            elbo_rel_tolerance: 1e-7,
            restarts: 10,
            seed: 0,
            init_scheme: InitScheme::DirichletRow,
            threads: 1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        if !(self.elbo_rel_tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult<F: ConjugateFamily> {
    pub state: VariationalState<F::Param>,
    /// Bound after initialization, then after every full update cycle.
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Restart that produced this result.
    pub restart: usize,
    pub model: MMModel<F>,
    /// `γ_n / Σ_h γ_nh`.
    pub tau_hat: Array2<f64>,
}

impl<F: ConjugateFamily> FitResult<F> {
    pub fn final_elbo(&self) -> f64 {
        *self.elbo_trace.last().expect("trace holds the initial bound")
    }
}

/// Random initial responsibilities for one restart.
pub fn initial_phi<R: Rng + ?Sized>(
    n_obs: usize,
    n_attr: usize,
    n_prof: usize,
    scheme: InitScheme,
    rng: &mut R,
) -> Result<Array3<f64>> {
    let ones = vec![1.0; n_prof];
    let mut phi = Array3::zeros((n_obs, n_attr, n_prof));
    for n in 0..n_obs {
        let row = match scheme {
            InitScheme::DirichletRow => Some(dirichlet(&ones, rng)?),
            InitScheme::DirichletPhi => None,
        };
        for m in 0..n_attr {
            let draw = match &row {
                Some(r) => r.clone(),
                None => dirichlet(&ones, rng)?,
            };
            for (g, v) in draw.into_iter().enumerate() {
                phi[[n, m, g]] = v;
            }
        }
    }
    Ok(phi)
}

/// Coordinate ascent from a given `φ`: cycles φ → γ → θ until the relative
/// change of the bound drops below the tolerance.
pub fn fit_from<F: ConjugateFamily>(
    x: &CountMatrix,
    model: &MMModel<F>,
    config: &FitConfig,
    phi0: Array3<f64>,
) -> Result<FitResult<F>> {
    config.validate()?;
    let expected = (x.n_rows(), x.n_cols(), model.n_profiles());
    if phi0.dim() != expected {
        return Err(Error::Shape(format!(
            "initial phi is {:?}, expected {:?}",
            phi0.dim(),
            expected
        )));
    }
    let gamma = update_gamma(&phi0, model.delta())?;
    let theta = update_theta(&phi0, x, model)?;
    let mut state = VariationalState {
        gamma,
        phi: phi0,
        theta,
    };
    let mut trace = vec![elbo(&state, x, model)?];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        state.phi = update_phi(&state, x, model)?;
        state.gamma = update_gamma(&state.phi, model.delta())?;
        state.theta = update_theta(&state.phi, x, model)?;
        let current = elbo(&state, x, model)?;
        let previous = *trace.last().unwrap();
        trace.push(current);
        if (current - previous).abs() <= config.elbo_rel_tolerance * previous.abs() {
            converged = true;
            break;
        }
    }
    let tau_hat = state.tau_hat();
    Ok(FitResult {
        state,
        elbo_trace: trace,
        converged,
        iterations,
        restart: 0,
        model: model.clone(),
        tau_hat,
    })
}

/// Best-bound fit over `config.restarts` seeded initializations. Ties go to
/// the lowest restart index.
pub fn fit<F: ConjugateFamily>(x: &CountMatrix, model: &MMModel<F>, config: &FitConfig) -> Result<FitResult<F>> {
    config.validate()?;
    let run = |restart: usize| -> Result<FitResult<F>> {
        let mut rng = rng_for(config.seed, restart as u64);
        let phi0 = initial_phi(x.n_rows(), x.n_cols(), model.n_profiles(), config.init_scheme, &mut rng)?;
        let mut result = fit_from(x, model, config, phi0)?;
        result.restart = restart;
        Ok(result)
    };
    let results: Vec<Result<FitResult<F>>> = if config.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| (0..config.restarts).into_par_iter().map(run).collect())
    } else {
        (0..config.restarts).map(run).collect()
    };
    let mut best: Option<FitResult<F>> = None;
    for result in results {
        let result = result?;
        if best.as_ref().is_none_or(|b| result.final_elbo() > b.final_elbo()) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart"))
}

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::expfam::PoissonGamma;
use crate::mixture::EmConfig;
use crate::select::McConfig;
use crate::vb::{FitConfig, InferenceMode, InitScheme};

/// Env var naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "MIXMEM_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "mixmem-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Mm,
    Mixture,
    Both,
}

/// Fully resolved settings of one command. Embedded in every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub family: ModelFamily,
    pub mode: InferenceMode,
    /// Candidate component counts; a single entry for one fit.
    pub components: Vec<usize>,
    /// `"1/G"` or a comma-separated vector.
    pub delta: String,
    pub alpha: f64,
    pub beta: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub em_tolerance: f64,
    pub em_max_iterations: usize,
    pub restarts: usize,
    pub seed: u64,
    pub init_scheme: InitScheme,
    pub mc_draws: usize,
    pub holdout_fraction: Option<f64>,
    pub threads: usize,
    /// SHA-256 of the input dataset file, when there is one.
    pub dataset_sha256: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fit = FitConfig::default();
        let em = EmConfig::default();
        Self {
            command: String::new(),
            family: ModelFamily::Mm,
            mode: InferenceMode::Nuisance,
            components: vec![1],
            delta: "1/G".into(),
            alpha: 0.01,
            beta: 0.01,
            tolerance: fit.elbo_rel_tolerance,
            max_iterations: fit.max_iterations,
            em_tolerance: em.rel_tolerance,
            em_max_iterations: em.max_iterations,
            restarts: fit.restarts,
            seed: 0,
            init_scheme: fit.init_scheme,
            mc_draws: McConfig::default().draws,
            holdout_fraction: None,
            threads: 1,
            dataset_sha256: None,
        }
    }
}

impl RunConfig {
    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn family_prior(&self) -> Result<PoissonGamma> {
        PoissonGamma::new(self.alpha, self.beta)
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            max_iterations: self.max_iterations,
            elbo_rel_tolerance: self.tolerance,
            restarts: self.restarts,
            seed: self.seed,
            init_scheme: self.init_scheme,
            threads: self.threads,
        }
    }

    pub fn em_config(&self) -> EmConfig {
        EmConfig {
            max_iterations: self.em_max_iterations,
            rel_tolerance: self.em_tolerance,
            restarts: self.restarts,
            seed: self.seed,
            threads: self.threads,
        }
    }

    pub fn mc_config(&self) -> McConfig {
        McConfig {
            draws: self.mc_draws,
            seed: self.seed,
            holdout_fraction: self.holdout_fraction,
            threads: self.threads,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() || self.components.contains(&0) {
            return Err(Error::Config("component counts must be positive".into()));
        }
        self.family_prior()?;
        self.fit_config().validate()?;
        self.mc_config().validate()?;
        for &g in &self.components {
            resolve_delta(&self.delta, g)?;
        }
        Ok(())
    }
}

/// Resolves `"1/G"` to `δ_g = 1/G`, or parses an explicit vector of length G.
pub fn resolve_delta(spec: &str, n_prof: usize) -> Result<Vec<f64>> {
    let spec = spec.trim();
    if spec.eq_ignore_ascii_case("1/G") {
        return Ok(vec![1.0 / n_prof as f64; n_prof]);
    }
    let values = spec
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad delta entry '{s}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != n_prof {
        return Err(Error::Config(format!(
            "delta has {} entries but the model has {n_prof} profiles",
            values.len()
        )));
    }
    if values.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::Config(format!("delta entries must be positive: {values:?}")));
    }
    Ok(values)
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

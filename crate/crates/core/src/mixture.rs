//! Finite Poisson mixture fitted by maximum-likelihood EM.
//!
//! Each observation belongs to exactly one group; given the group its
//! attributes are independent Poisson counts.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CountMatrix;
use crate::error::{Error, Result};
use crate::expfam::{WEIGHT_FLOOR, RATE_FLOOR};
use crate::sampling::{dirichlet, rng_for};
use crate::special::{ln_factorial, normalize_log_weights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    /// Group weights `τ^mix`, on the simplex.
    pub weights: Vec<f64>,
    /// G × M Poisson rates `θ^mix`.
    pub rates: Array2<f64>,
}

impl MixtureModel {
    pub fn new(weights: Vec<f64>, rates: Array2<f64>) -> Result<Self> {
        if weights.len() != rates.nrows() || weights.is_empty() {
            return Err(Error::Shape(format!(
                "{} weights for {} rate rows",
                weights.len(),
                rates.nrows()
            )));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("weights must lie on the simplex, got {weights:?}")));
        }
        if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::Domain("rates must be finite and non-negative".into()));
        }
        Ok(Self { weights, rates })
    }

    pub fn n_groups(&self) -> usize {
        self.weights.len()
    }

    /// The same model with groups reordered: new group `k` is old `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            weights: perm.iter().map(|&g| self.weights[g]).collect(),
            rates: self.rates.select(ndarray::Axis(0), perm),
        }
    }
}

/// N × G posterior group probabilities, rows on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Responsibilities(pub Array2<f64>);

impl Responsibilities {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iterations: usize,
    pub rel_tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            rel_tolerance: 1e-8,
            restarts: 10,
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmResult {
    pub model: MixtureModel,
    /// Log-likelihood of each successive parameter set, starting from the
    /// one estimated from the random initial responsibilities.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub bic: f64,
    /// Responsibilities under the returned model.
    pub responsibilities: Responsibilities,
    pub restart: usize,
}

impl EmResult {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }
}

fn check_model(x: &CountMatrix, model: &MixtureModel) -> Result<()> {
    if model.rates.ncols() != x.n_cols() {
        return Err(Error::Shape(format!(
            "model has {} attributes, data has {}",
            model.rates.ncols(),
            x.n_cols()
        )));
    }
    Ok(())
}

/// Responsibilities and the log-likelihood, from one pass over the data.
pub fn e_step_with_loglik(x: &CountMatrix, model: &MixtureModel) -> Result<(Responsibilities, f64)> {
    check_model(x, model)?;
    let n_groups = model.n_groups();
    let log_rates = model.rates.mapv(|r| r.max(RATE_FLOOR).ln());
    let rate_sums: Vec<f64> = model.rates.rows().into_iter().map(|r| r.iter().map(|v| v.max(RATE_FLOOR)).sum()).collect();
    let log_weights: Vec<f64> = model.weights.iter().map(|w| w.ln()).collect();

    let mut resp = Array2::zeros((x.n_rows(), n_groups));
    let mut loglik = 0.0;
    let mut row_weights = vec![0.0; n_groups];
    for n in 0..x.n_rows() {
        let xs = x.row(n);
        let base: f64 = xs.iter().map(|&v| ln_factorial(v)).sum();
        for (g, w) in row_weights.iter_mut().enumerate() {
            let dot: f64 = xs.iter().zip(log_rates.row(g)).map(|(&v, lr)| v as f64 * lr).sum();
            *w = log_weights[g] + dot - rate_sums[g] - base;
        }
        let norm = normalize_log_weights(&mut row_weights)
            .map_err(|_| Error::NonFinite(format!("observation {n} has zero density under every group")))?;
        loglik += norm;
        for (g, w) in row_weights.iter().enumerate() {
            resp[[n, g]] = *w;
        }
    }
    Ok((Responsibilities(resp), loglik))
}

/// `r_ng ∝ τ_g ∏_m p(x_nm | θ_gm)`, computed in log space.
pub fn e_step(x: &CountMatrix, model: &MixtureModel) -> Result<Responsibilities> {
    e_step_with_loglik(x, model).map(|(r, _)| r)
}

/// `log Π_n Σ_g τ_g Π_m p(x_nm | θ_gm)`.
pub fn log_likelihood(x: &CountMatrix, model: &MixtureModel) -> Result<f64> {
    e_step_with_loglik(x, model).map(|(_, ll)| ll)
}

/// `τ_g = Σ_n r_ng / N`, `θ_gm = Σ_n r_ng x_nm / Σ_n r_ng`. A group with no
/// weight takes the column means; rates are floored.
pub fn m_step(x: &CountMatrix, resp: &Responsibilities) -> Result<MixtureModel> {
    let r = resp.matrix();
    if r.nrows() != x.n_rows() {
        return Err(Error::Shape(format!(
            "{} responsibility rows for {} observations",
            r.nrows(),
            x.n_rows()
        )));
    }
    let (n_obs, n_groups) = r.dim();
    let n_attr = x.n_cols();
    let counts = x.values().mapv(|v| v as f64);
    let col_means = counts.sum_axis(ndarray::Axis(0)) / n_obs as f64;
    let totals = r.sum_axis(ndarray::Axis(0));
    // G × M weighted sums
    let weighted = r.t().dot(&counts);
    let mut rates = Array2::zeros((n_groups, n_attr));
    for g in 0..n_groups {
        for m in 0..n_attr {
            let rate = if totals[g] < WEIGHT_FLOOR {
                col_means[m]
            } else {
                weighted[[g, m]] / totals[g]
            };
            rates[[g, m]] = rate.max(RATE_FLOOR);
        }
    }
    let weights = totals.iter().map(|t| t / n_obs as f64).collect();
    Ok(MixtureModel { weights, rates })
}

/// `−2 ℓ + κ log N` with `κ = (G − 1) + G·M`. Lower is better.
pub fn bic(loglik: f64, n_groups: usize, n_obs: usize, n_attr: usize) -> f64 {
    -2.0 * loglik + free_parameters(n_groups, n_attr) as f64 * (n_obs as f64).ln()
}

pub fn free_parameters(n_groups: usize, n_attr: usize) -> usize {
    (n_groups - 1) + n_groups * n_attr
}

/// EM from given initial responsibilities.
pub fn fit_em_from(x: &CountMatrix, init: Responsibilities, config: &EmConfig) -> Result<EmResult> {
    let n_groups = init.matrix().ncols();
    let mut model = m_step(x, &init)?;
    let (mut resp, ll) = e_step_with_loglik(x, &model)?;
    let mut trace = vec![ll];
    let mut converged = false;
    while trace.len() <= config.max_iterations {
        let next = m_step(x, &resp)?;
        let (next_resp, ll) = e_step_with_loglik(x, &next)?;
        let previous = *trace.last().unwrap();
        model = next;
        resp = next_resp;
        trace.push(ll);
        if (ll - previous).abs() <= config.rel_tolerance * previous.abs() {
            converged = true;
            break;
        }
    }
    let loglik = *trace.last().unwrap();
    Ok(EmResult {
        bic: bic(loglik, n_groups, x.n_rows(), x.n_cols()),
        model,
        iterations: trace.len() - 1,
        loglik_trace: trace,
        converged,
        responsibilities: resp,
        restart: 0,
    })
}

/// Best-likelihood EM fit over seeded random responsibility initializations.
pub fn fit_em(x: &CountMatrix, n_groups: usize, config: &EmConfig) -> Result<EmResult> {
    if n_groups == 0 {
        return Err(Error::Config("at least one group is required".into()));
    }
    if config.restarts == 0 || config.max_iterations == 0 || !(config.rel_tolerance > 0.0) || config.threads == 0 {
        return Err(Error::Config(format!("invalid EM configuration {config:?}")));
    }
    let run = |restart: usize| -> Result<EmResult> {
        let mut rng = rng_for(config.seed, restart as u64);
        let ones = vec![1.0; n_groups];
        let mut init = Array2::zeros((x.n_rows(), n_groups));
        for mut row in init.rows_mut() {
            for (v, d) in row.iter_mut().zip(dirichlet(&ones, &mut rng)?) {
                *v = d;
            }
        }
        let mut result = fit_em_from(x, Responsibilities(init), config)?;
        result.restart = restart;
        Ok(result)
    };
    let results: Vec<Result<EmResult>> = if config.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| (0..config.restarts).into_par_iter().map(run).collect())
    } else {
        (0..config.restarts).map(run).collect()
    };
    let mut best: Option<EmResult> = None;
    for result in results {
        let result = result?;
        if best.as_ref().is_none_or(|b| result.loglik() > b.loglik()) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart"))
}

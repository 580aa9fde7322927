//! Choosing the number of profiles / groups.
//!
//! Mixed membership fits are scored by the marginal likelihood of the data
//! with `τ` and `Z` integrated out against the Dirichlet prior, estimated by
//! Monte Carlo over prior draws of `τ`. Mixture fits are scored by BIC.

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CountMatrix;
use crate::error::{Error, Result};
use crate::expfam::{log_density, ConjugateFamily, PoissonGamma};
use crate::mixture::{self, EmConfig};
use crate::sampling::{dirichlet, rng_for, row_seed};
use crate::special::{ln_gamma_unchecked, log_sum_exp};
use crate::vb::{self, FitConfig, InferenceMode, MMModel};

/// Largest number of assignments the exact evaluator will enumerate per observation.
pub const ENUMERATION_LIMIT: f64 = 1e6;

const MC_STREAM: u64 = 1 << 40;
const SPLIT_STREAM: u64 = (1 << 40) + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    /// Number of Dirichlet draws T.
    pub draws: usize,
    pub seed: u64,
    /// Fraction of rows held out for evaluation; `None` evaluates on the
    /// fitted data.
    pub holdout_fraction: Option<f64>,
    pub threads: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            draws: 100_000,
            seed: 0,
            holdout_fraction: None,
            threads: 1,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::Config("Monte Carlo needs at least one draw".into()));
        }
        if let Some(f) = self.holdout_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("holdout fraction must be in (0, 1), got {f}")));
            }
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// N × M × G table of `log p(x_nm | θ_gm)`.
fn log_density_table<F: ConjugateFamily>(
    family: &F,
    x: &CountMatrix,
    theta: &Array2<F::Param>,
) -> Result<Array3<f64>> {
    let (n_prof, n_attr) = theta.dim();
    if n_attr != x.n_cols() || n_prof == 0 {
        return Err(Error::Shape(format!(
            "theta is {n_prof}x{n_attr}, data has {} attributes",
            x.n_cols()
        )));
    }
    let floored = theta.map(|t| family.floor_param(t));
    let mut table = Array3::zeros((x.n_rows(), n_attr, n_prof));
    for ((n, m, g), v) in table.indexed_iter_mut() {
        *v = log_density(family, x.get(n, m), &floored[[g, m]])?;
    }
    Ok(table)
}

fn check_delta(delta: &[f64], n_prof: usize) -> Result<()> {
    if delta.len() != n_prof {
        return Err(Error::Shape(format!("{} profiles but {} Dirichlet parameters", n_prof, delta.len())));
    }
    if delta.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::Domain(format!("Dirichlet parameters must be positive, got {delta:?}")));
    }
    Ok(())
}

fn map_rows<T: Send>(threads: usize, n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| (0..n).into_par_iter().map(&f).collect())
    } else {
        (0..n).map(f).collect()
    }
}

/// Per-observation Monte Carlo estimates of
/// `log ∫ Π_m Σ_g τ_g p(x_nm | θ_gm) dDir(τ | δ)`.
///
/// One set of T draws is shared by all observations.
pub fn holdout_loglik_mc_per_obs<F: ConjugateFamily>(
    family: &F,
    x: &CountMatrix,
    theta: &Array2<F::Param>,
    delta: &[f64],
    cfg: &McConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n_prof = theta.nrows();
    check_delta(delta, n_prof)?;
    let table = log_density_table(family, x, theta)?;
    let n_attr = x.n_cols();
    if n_prof == 1 {
        return Ok((0..x.n_rows()).map(|n| table.slice(ndarray::s![n, .., 0]).sum()).collect());
    }

    let mut rng = rng_for(cfg.seed, MC_STREAM);
    let mut draws = Vec::with_capacity(cfg.draws * n_prof);
    for _ in 0..cfg.draws {
        draws.extend(dirichlet(delta, &mut rng)?);
    }
    let log_t = (cfg.draws as f64).ln();

    map_rows(cfg.threads, x.n_rows(), |n| {
        // scale each attribute's densities by their max to avoid underflow
        let mut offset = 0.0;
        let mut scaled = vec![0.0; n_attr * n_prof];
        for m in 0..n_attr {
            let row = table.slice(ndarray::s![n, m, ..]);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            offset += max;
            for g in 0..n_prof {
                scaled[m * n_prof + g] = (row[g] - max).exp();
            }
        }
        let per_draw: Vec<f64> = draws
            .chunks_exact(n_prof)
            .map(|tau| {
                scaled
                    .chunks_exact(n_prof)
                    .map(|dens| tau.iter().zip(dens).map(|(t, d)| t * d).sum::<f64>().ln())
                    .sum::<f64>()
            })
            .collect();
        let value = offset + log_sum_exp(&per_draw) - log_t;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("Monte Carlo estimate for observation {n} is {value}")));
        }
        Ok(value)
    })
}

/// Sum of [`holdout_loglik_mc_per_obs`] over observations.
pub fn holdout_loglik_mc<F: ConjugateFamily>(
    family: &F,
    x: &CountMatrix,
    theta: &Array2<F::Param>,
    delta: &[f64],
    cfg: &McConfig,
) -> Result<f64> {
    Ok(holdout_loglik_mc_per_obs(family, x, theta, delta, cfg)?.iter().sum())
}

/// Exact per-observation values of the integrated likelihood, by enumerating
/// every assignment `z ∈ {1..G}^M` and weighting it with the
/// Dirichlet-multinomial probability
/// `Γ(Σδ) Π_g Γ(δ_g + c_g) / (Γ(Σδ + M) Π_g Γ(δ_g))`.
pub fn holdout_loglik_exact_per_obs<F: ConjugateFamily>(
    family: &F,
    x: &CountMatrix,
    theta: &Array2<F::Param>,
    delta: &[f64],
) -> Result<Vec<f64>> {
    let n_prof = theta.nrows();
    check_delta(delta, n_prof)?;
    let n_attr = x.n_cols();
    let count = (n_prof as f64).powi(n_attr as i32);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationLimit {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let table = log_density_table(family, x, theta)?;
    let delta_sum: f64 = delta.iter().sum();
    let log_norm = ln_gamma_unchecked(delta_sum)
        - delta.iter().map(|d| ln_gamma_unchecked(*d)).sum::<f64>()
        - ln_gamma_unchecked(delta_sum + n_attr as f64);
    // ln Γ(δ_g + c) for c = 0..M
    let lg: Vec<Vec<f64>> = delta
        .iter()
        .map(|d| (0..=n_attr).map(|c| ln_gamma_unchecked(d + c as f64)).collect())
        .collect();

    let mut out = Vec::with_capacity(x.n_rows());
    for n in 0..x.n_rows() {
        let mut z = vec![0usize; n_attr];
        let mut counts = vec![0usize; n_prof];
        counts[0] = n_attr;
        // streaming log-sum-exp
        let mut max = f64::NEG_INFINITY;
        let mut acc = 0.0;
        loop {
            let mut term = log_norm;
            for (m, &g) in z.iter().enumerate() {
                term += table[[n, m, g]];
            }
            for (g, &c) in counts.iter().enumerate() {
                term += lg[g][c];
            }
            if term > max {
                acc = acc * (max - term).exp() + 1.0;
                max = term;
            } else {
                acc += (term - max).exp();
            }
            // odometer increment
            let mut pos = 0;
            loop {
                if pos == n_attr {
                    break;
                }
                counts[z[pos]] -= 1;
                z[pos] += 1;
                if z[pos] == n_prof {
                    z[pos] = 0;
                    counts[0] += 1;
                    pos += 1;
                } else {
                    counts[z[pos]] += 1;
                    break;
                }
            }
            if pos == n_attr {
                break;
            }
        }
        out.push(max + acc.ln());
    }
    Ok(out)
}

/// Sum of [`holdout_loglik_exact_per_obs`].
pub fn holdout_loglik_exact<F: ConjugateFamily>(
    family: &F,
    x: &CountMatrix,
    theta: &Array2<F::Param>,
    delta: &[f64],
) -> Result<f64> {
    Ok(holdout_loglik_exact_per_obs(family, x, theta, delta)?.iter().sum())
}

/// Random train / evaluation row split; `fraction` of rows (at least one)
/// go to evaluation.
pub fn split_rows(n_rows: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_rows < 2 {
        return Err(Error::Config("a split needs at least two rows".into()));
    }
    let mut idx: Vec<usize> = (0..n_rows).collect();
    idx.shuffle(&mut rng_for(seed, SPLIT_STREAM));
    let n_eval = ((n_rows as f64 * fraction).round() as usize).clamp(1, n_rows - 1);
    let eval = idx.split_off(n_rows - n_eval);
    idx.sort_unstable();
    let mut eval = eval;
    eval.sort_unstable();
    Ok((idx, eval))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Mixture BIC, lower is better.
    MixtureBic,
    /// Mixed membership integrated likelihood, higher is better.
    HoldoutLoglik,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::MixtureBic => "mixture_bic",
            Criterion::HoldoutLoglik => "holdout_loglik",
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, Criterion::HoldoutLoglik)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_components: usize,
    pub criterion: Criterion,
    pub value: Option<f64>,
    pub error: Option<String>,
    /// ELBO for mixed membership rows, log-likelihood for mixture rows.
    pub fit_objective: Option<f64>,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn values(&self, criterion: Criterion) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter(|r| r.criterion == criterion)
            .filter_map(|r| r.value.map(|v| (r.n_components, v)))
            .collect()
    }

    /// Component count with the best value; ties go to the smaller count.
    pub fn best(&self, criterion: Criterion) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (g, v) in self.values(criterion) {
            let better = match best {
                None => true,
                Some((bg, bv)) => {
                    if criterion.higher_is_better() {
                        v > bv || (v == bv && g < bg)
                    } else {
                        v < bv || (v == bv && g < bg)
                    }
                }
            };
            if better {
                best = Some((g, v));
            }
        }
        best.map(|(g, _)| g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub components: Vec<usize>,
    pub family: PoissonGamma,
    pub mode: InferenceMode,
    pub mm: FitConfig,
    pub em: EmConfig,
    pub mc: McConfig,
    pub seed: u64,
}

/// Fits both model families at every candidate count and records their
/// criteria. A failed fit yields a row with `error` set; the sweep continues.
pub fn sweep(x: &CountMatrix, cfg: &SweepConfig) -> Result<SweepResult> {
    if cfg.components.is_empty() || cfg.components.contains(&0) {
        return Err(Error::Config("component range must be non-empty and positive".into()));
    }
    cfg.mc.validate()?;
    let (train, eval) = match cfg.mc.holdout_fraction {
        Some(f) => {
            let (tr, ev) = split_rows(x.n_rows(), f, cfg.seed)?;
            (x.select_rows(&tr)?, Some(x.select_rows(&ev)?))
        }
        None => (x.clone(), None),
    };
    let eval = eval.as_ref().unwrap_or(&train);

    let mut rows = Vec::with_capacity(2 * cfg.components.len());
    for (i, &g) in cfg.components.iter().enumerate() {
        let seed = row_seed(cfg.seed, i as u64);

        let mm_row = (|| -> Result<SweepRow> {
            let model = MMModel::poisson(g, cfg.mode, cfg.family)?;
            let fit = vb::fit(&train, &model, &FitConfig { seed, ..cfg.mm.clone() })?;
            let rates = fit.state.rates(&cfg.family);
            let mc = McConfig { seed, holdout_fraction: None, ..cfg.mc.clone() };
            let value = holdout_loglik_mc(&cfg.family, eval, &rates, model.delta(), &mc)?;
            Ok(SweepRow {
                n_components: g,
                criterion: Criterion::HoldoutLoglik,
                value: Some(value),
                error: None,
                fit_objective: Some(fit.final_elbo()),
                converged: Some(fit.converged),
                iterations: Some(fit.iterations),
                seed,
            })
        })();
        rows.push(mm_row.unwrap_or_else(|e| failed_row(g, Criterion::HoldoutLoglik, seed, e)));

        let mix_row = mixture::fit_em(&train, g, &EmConfig { seed, ..cfg.em.clone() }).map(|fit| SweepRow {
            n_components: g,
            criterion: Criterion::MixtureBic,
            value: Some(fit.bic),
            error: None,
            fit_objective: Some(fit.loglik()),
            converged: Some(fit.converged),
            iterations: Some(fit.iterations),
            seed,
        });
        rows.push(mix_row.unwrap_or_else(|e| failed_row(g, Criterion::MixtureBic, seed, e)));
    }
    Ok(SweepResult { rows })
}

fn failed_row(g: usize, criterion: Criterion, seed: u64, err: Error) -> SweepRow {
    SweepRow {
        n_components: g,
        criterion,
        value: None,
        error: Some(err.to_string()),
        fit_objective: None,
        converged: None,
        iterations: None,
        seed,
    }
}

//! Structured JSON result documents. Profile and group labels are 1-based.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::data::CountMatrix;
use crate::error::{Error, Result};
use crate::evaluate::{self, CrossTab, EomSummary, Histogram, ProfileAssignment, Recovery};
use crate::expfam::PoissonGamma;
use crate::mixture::EmResult;
use crate::select::SweepResult;
use crate::vb::{FitResult, InferenceMode};

pub const FORMAT: &str = "mixmem-result";
pub const VERSION: u32 = 1;
pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentKind {
    MmFit,
    MixtureFit,
    Sweep,
    Simulation,
    Evaluation,
    Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub format: String,
    pub version: u32,
    pub kind: DocumentKind,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dataset: Option<DatasetSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mm: Option<MmFitDoc>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mixture: Option<MixtureFitDoc>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub statistics: Option<StatisticsDoc>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub recovery: Option<RecoveryDoc>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sweep: Option<SweepDoc>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub truth: Option<TruthDoc>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub crosstab: Option<CrossTabDoc>,
}

impl ResultDocument {
    pub fn new(kind: DocumentKind, config: &RunConfig) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            kind,
            seed: config.seed,
            config_hash: config.hash(),
            config: config.clone(),
            dataset: None,
            mm: None,
            mixture: None,
            statistics: None,
            recovery: None,
            sweep: None,
            truth: None,
            crosstab: None,
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: Self = serde_json::from_str(&text)?;
        if doc.format != FORMAT {
            return Err(Error::Config(format!("{} is not a {FORMAT} document", path.display())));
        }
        Ok(doc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_rows: usize,
    pub n_cols: usize,
    pub id_label: String,
    pub row_ids: Vec<String>,
    pub col_labels: Vec<String>,
    pub sha256: Option<String>,
}

impl DatasetSummary {
    pub fn new(data: &CountMatrix, sha256: Option<String>) -> Self {
        Self {
            n_rows: data.n_rows(),
            n_cols: data.n_cols(),
            id_label: data.id_label().to_string(),
            row_ids: data.row_ids().to_vec(),
            col_labels: data.col_labels().to_vec(),
            sha256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDoc {
    pub eta: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmFitDoc {
    pub mode: InferenceMode,
    pub n_profiles: usize,
    pub delta: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// Posterior means in Bayes mode, point estimates in nuisance mode.
    pub rates: Vec<Vec<f64>>,
    pub posterior: Option<PosteriorDoc>,
    pub gamma: Vec<Vec<f64>>,
    pub tau_hat: Vec<Vec<f64>>,
    /// N × M × G responsibilities.
    pub phi: Vec<Vec<Vec<f64>>>,
    /// Bound after initialization and after every cycle. In nuisance mode a
    /// bound on the log evidence at the current point estimates.
    pub elbo_trace: Vec<f64>,
    pub final_elbo: f64,
    pub converged: bool,
    pub iterations: usize,
    pub restart: usize,
}

impl MmFitDoc {
    pub fn from_fit(fit: &FitResult<PoissonGamma>) -> Self {
        let family = &fit.model.family;
        let posterior = fit.state.theta_posterior().map(|post| PosteriorDoc {
            eta: rows(&post.map(|p| p.eta)),
            nu: rows(&post.map(|p| p.nu[0])),
        });
        Self {
            mode: fit.model.mode(),
            n_profiles: fit.model.n_profiles(),
            delta: fit.model.delta().to_vec(),
            alpha: family.alpha,
            beta: family.beta,
            rates: rows(&fit.state.rates(family)),
            posterior,
            gamma: rows(&fit.state.gamma),
            tau_hat: rows(&fit.tau_hat),
            phi: fit
                .state
                .phi
                .outer_iter()
                .map(|obs| obs.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect(),
            elbo_trace: fit.elbo_trace.clone(),
            final_elbo: fit.final_elbo(),
            converged: fit.converged,
            iterations: fit.iterations,
            restart: fit.restart,
        }
    }

    pub fn phi_array(&self) -> Result<Array3<f64>> {
        let n = self.phi.len();
        let m = self.phi.first().map_or(0, Vec::len);
        let g = self.n_profiles;
        let flat: Vec<f64> = self.phi.iter().flatten().flatten().copied().collect();
        Array3::from_shape_vec((n, m, g), flat).map_err(|e| Error::Shape(format!("phi: {e}")))
    }

    pub fn tau_hat_array(&self) -> Result<Array2<f64>> {
        array2(&self.tau_hat, self.n_profiles)
    }

    pub fn rates_array(&self) -> Result<Array2<f64>> {
        let m = self.rates.first().map_or(0, Vec::len);
        array2(&self.rates, m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFitDoc {
    pub n_groups: usize,
    pub weights: Vec<f64>,
    pub rates: Vec<Vec<f64>>,
    pub loglik: f64,
    pub bic: f64,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub restart: usize,
    pub responsibilities: Vec<Vec<f64>>,
    pub map_group: Vec<usize>,
    pub uncertainty: Vec<f64>,
}

impl MixtureFitDoc {
    pub fn from_fit(fit: &EmResult) -> Self {
        let (map, unc) = evaluate::mixture_map_and_uncertainty(&fit.responsibilities);
        Self {
            n_groups: fit.model.n_groups(),
            weights: fit.model.weights.clone(),
            rates: rows(&fit.model.rates),
            loglik: fit.loglik(),
            bic: fit.bic,
            loglik_trace: fit.loglik_trace.clone(),
            converged: fit.converged,
            iterations: fit.iterations,
            restart: fit.restart,
            responsibilities: rows(fit.responsibilities.matrix()),
            map_group: map.into_iter().map(|g| g + 1).collect(),
            uncertainty: unc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramDoc {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub count: Vec<usize>,
}

impl From<&Histogram> for HistogramDoc {
    fn from(h: &Histogram) -> Self {
        let (lower, upper) = h.edges().into_iter().unzip();
        Self {
            lower,
            upper,
            count: h.counts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSetCount {
    pub set: Vec<usize>,
    pub count: usize,
}

/// Per-observation and per-cell summaries derived from `φ` and `τ̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticsDoc {
    pub eom: Vec<f64>,
    pub eom_histogram: HistogramDoc,
    pub map_z: Vec<Vec<usize>>,
    pub profile_sets: Vec<Vec<usize>>,
    /// Distinct profile sets by descending count, then lexicographically.
    pub profile_set_counts: Vec<ProfileSetCount>,
    pub uncertainty: Vec<Vec<f64>>,
    pub uncertainty_histogram: HistogramDoc,
    /// Share of observations whose cells all map to one profile.
    pub single_profile_share: f64,
}

impl StatisticsDoc {
    pub fn compute(phi: &Array3<f64>, tau_hat: &Array2<f64>) -> Result<(Self, ProfileAssignment, EomSummary)> {
        let n_prof = phi.dim().2;
        let assignment = ProfileAssignment::from_phi(phi);
        let eom = EomSummary::from_tau(tau_hat, HISTOGRAM_BINS)?;
        let unc_upper = if n_prof > 1 { 1.0 - 1.0 / n_prof as f64 } else { 1.0 };
        let unc_values: Vec<f64> = assignment.uncertainty.iter().copied().collect();
        let unc_hist = Histogram::new(&unc_values, 0.0, unc_upper, HISTOGRAM_BINS)?;

        let n_obs = assignment.profile_sets.len();
        let groups = vec![0; n_obs];
        let tab = evaluate::cross_tab(&groups, &assignment.profile_sets, 1)?;
        let profile_set_counts = tab
            .sets
            .iter()
            .zip(tab.column_totals())
            .map(|(s, count)| ProfileSetCount {
                set: one_based(s),
                count,
            })
            .collect();
        let singles = assignment.profile_sets.iter().filter(|s| s.len() == 1).count();

        let doc = Self {
            eom: eom.values.clone(),
            eom_histogram: (&eom.histogram).into(),
            map_z: assignment
                .map_z
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|g| g + 1).collect())
                .collect(),
            profile_sets: assignment.profile_sets.iter().map(|s| one_based(s)).collect(),
            profile_set_counts,
            uncertainty: rows(&assignment.uncertainty),
            uncertainty_histogram: (&unc_hist).into(),
            single_profile_share: if n_obs == 0 { 0.0 } else { singles as f64 / n_obs as f64 },
        };
        Ok((doc, assignment, eom))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRowDoc {
    pub n_components: usize,
    pub criterion: String,
    pub orientation: String,
    pub value: Option<f64>,
    pub fit_objective: Option<f64>,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub seed: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDoc {
    pub rows: Vec<SweepRowDoc>,
    pub best_holdout_loglik: Option<usize>,
    pub best_mixture_bic: Option<usize>,
}

impl SweepDoc {
    pub fn from_result(result: &SweepResult) -> Self {
        use crate::select::Criterion;
        let rows = result
            .rows
            .iter()
            .map(|r| SweepRowDoc {
                n_components: r.n_components,
                criterion: r.criterion.name().into(),
                orientation: orientation(r.criterion.higher_is_better()).into(),
                value: r.value,
                fit_objective: r.fit_objective,
                converged: r.converged,
                iterations: r.iterations,
                seed: r.seed,
                error: r.error.clone(),
            })
            .collect();
        Self {
            rows,
            best_holdout_loglik: result.best(Criterion::HoldoutLoglik),
            best_mixture_bic: result.best(Criterion::MixtureBic),
        }
    }
}

pub fn orientation(higher_is_better: bool) -> &'static str {
    if higher_is_better {
        "higher is better"
    } else {
        "lower is better"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryDoc {
    /// Estimated profile matched to each true profile.
    pub permutation: Vec<usize>,
    pub mean_relative_rate_error: f64,
    pub mean_abs_tau_error: f64,
}

impl From<&Recovery> for RecoveryDoc {
    fn from(r: &Recovery) -> Self {
        Self {
            permutation: one_based(&r.permutation),
            mean_relative_rate_error: r.mean_relative_rate_error,
            mean_abs_tau_error: r.mean_abs_tau_error,
        }
    }
}

/// Latent truth of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDoc {
    pub rates: Vec<Vec<f64>>,
    pub delta: Vec<f64>,
    pub tau: Vec<Vec<f64>>,
    pub z: Vec<Vec<usize>>,
}

impl TruthDoc {
    pub fn rates_array(&self) -> Result<Array2<f64>> {
        let m = self.rates.first().map_or(0, Vec::len);
        array2(&self.rates, m)
    }

    pub fn tau_array(&self) -> Result<Array2<f64>> {
        array2(&self.tau, self.delta.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTabDoc {
    pub groups: Vec<usize>,
    pub sets: Vec<Vec<usize>>,
    pub counts: Vec<Vec<usize>>,
}

impl From<&CrossTab> for CrossTabDoc {
    fn from(t: &CrossTab) -> Self {
        Self {
            groups: t.groups.iter().map(|g| g + 1).collect(),
            sets: t.sets.iter().map(|s| one_based(s)).collect(),
            counts: t.counts.clone(),
        }
    }
}

pub(crate) fn rows<T: Clone>(a: &Array2<T>) -> Vec<Vec<T>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub(crate) fn array2(rows: &[Vec<f64>], width: usize) -> Result<Array2<f64>> {
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Shape(format!("ragged matrix, expected width {width}")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), width), flat).map_err(|e| Error::Shape(e.to_string()))
}

fn one_based(set: &[usize]) -> Vec<usize> {
    set.iter().map(|g| g + 1).collect()
}

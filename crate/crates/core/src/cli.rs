//! Command-line surface: `mixmem <subcommand> [flags]`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rand::Rng;

use crate::data::CountMatrix;
use crate::error::{Error, Result};
use crate::evaluate::{self, ternary_coords, ternary_faces};
use crate::fetch;
use crate::io::document::{
    rows, CrossTabDoc, DatasetSummary, MixtureFitDoc, MmFitDoc, RecoveryDoc, StatisticsDoc, SweepDoc, TruthDoc,
};
use crate::io::{self, plot, DocumentKind, ModelFamily, ResultDocument, RunConfig, DEFAULT_OUTPUT_DIR, OUTPUT_DIR_ENV};
use crate::mixture;
use crate::sampling::rng_for;
use crate::select::{self, SweepConfig};
use crate::vb::{self, InferenceMode, InitScheme, MMModel, PriorSpec};

const TRUTH_STREAM: u64 = 2;

#[derive(Debug, Parser)]
#[command(name = "mixmem", version, about = "Mixed membership and mixture clustering of count data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a mixed membership model by variational Bayes.
    FitMm(FitMmArgs),
    /// Fit a finite Poisson mixture by EM.
    FitMixture(FitMixtureArgs),
    /// Fit both families over a range of component counts and tabulate the criteria.
    Sweep(SweepArgs),
    /// Draw a dataset from the mixed membership model.
    Simulate(SimulateArgs),
    /// Recompute membership statistics from a saved mixed membership fit.
    Evaluate(EvaluateArgs),
    /// Cross-tabulate a mixture fit against the profile sets of a mixed membership fit.
    Report(ReportArgs),
    /// Download the 24-hour race lap counts and convert them to a dataset file.
    FetchRace(FetchArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory.
    #[arg(long, env = OUTPUT_DIR_ENV, default_value = DEFAULT_OUTPUT_DIR)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for restarts and Monte Carlo draws.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Debug, Args)]
struct MmControls {
    #[arg(long, default_value = "nuisance")]
    mode: InferenceMode,
    /// "1/G" or a comma-separated vector.
    #[arg(long, default_value = "1/G")]
    delta: String,
    /// Gamma prior shape.
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    /// Gamma prior rate.
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    /// Relative ELBO change that stops coordinate ascent.
    #[arg(long, default_value_t = 1e-7)]
    tolerance: f64,
    #[arg(long, default_value_t = 1000)]
    max_iterations: usize,
    #[arg(long, default_value = "dirichlet-row")]
    init: InitScheme,
}

#[derive(Debug, Args)]
struct EmControls {
    #[arg(long, default_value_t = 1e-8)]
    em_tolerance: f64,
    #[arg(long, default_value_t = 2000)]
    em_max_iterations: usize,
}

#[derive(Debug, Args)]
struct FitMmArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "G")]
    g: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Simulation truth document; adds recovery metrics.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    mm: MmControls,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct FitMixtureArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "G")]
    g: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[command(flatten)]
    em: EmControls,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1)]
    g_min: usize,
    #[arg(long)]
    g_max: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Monte Carlo draws T for the hold-out likelihood.
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    /// Evaluate the hold-out likelihood on this fraction of rows, fitting on the rest.
    #[arg(long)]
    holdout_fraction: Option<f64>,
    #[command(flatten)]
    mm: MmControls,
    #[command(flatten)]
    em: EmControls,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long = "G")]
    g: usize,
    #[arg(long = "N")]
    n: usize,
    #[arg(long = "M")]
    m: usize,
    /// Base rate of each profile; defaults to 2, 6, 18, ... (factor 3 apart).
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    /// Per-attribute multiplicative jitter, uniform in [1 − v, 1 + v].
    #[arg(long, default_value_t = 0.2)]
    variation: f64,
    #[arg(long, default_value = "1/G")]
    delta: String,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Result document of fit-mm.
    #[arg(long)]
    result: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Result document of fit-mm.
    #[arg(long)]
    mm: PathBuf,
    /// Result document of fit-mixture.
    #[arg(long)]
    mixture: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FetchArgs {
    #[arg(long, default_value = fetch::RACE_URL)]
    url: String,
    /// Convert a local workbook instead of downloading.
    #[arg(long)]
    xlsx: Option<PathBuf>,
    /// Treat the hourly columns as running totals.
    #[arg(long)]
    cumulative: bool,
    #[arg(long, env = OUTPUT_DIR_ENV, default_value = DEFAULT_OUTPUT_DIR)]
    out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Usage(#[from] clap::Error),
    #[error(transparent)]
    Run(#[from] Error),
}

/// Parses `argv` (program name first) and runs the subcommand. Returns the
/// files written.
pub fn execute<I, T>(argv: I) -> std::result::Result<Vec<PathBuf>, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    Ok(match cli.command {
        Command::FitMm(a) => fit_mm(a)?,
        Command::FitMixture(a) => fit_mixture(a)?,
        Command::Sweep(a) => sweep(a)?,
        Command::Simulate(a) => simulate(a)?,
        Command::Evaluate(a) => evaluate_cmd(a)?,
        Command::Report(a) => report(a)?,
        Command::FetchRace(a) => fetch_race(a)?,
    })
}

/// Runs `execute` and maps the outcome to a process exit status, printing
/// written files to stdout and diagnostics to stderr.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match execute(argv) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(CliError::Usage(e)) => {
            let _ = e.print();
            e.exit_code()
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

struct Output {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn document(&mut self, name: &str, doc: &ResultDocument) -> Result<()> {
        let path = self.dir.join(name);
        doc.write(&path)?;
        self.written.push(path);
        Ok(())
    }

    fn plot(&mut self, name: &str, table: &plot::PlotTable, doc: &ResultDocument) -> Result<()> {
        let path = self.dir.join(name);
        table.write(&path, doc.seed, &doc.config_hash)?;
        self.written.push(path);
        Ok(())
    }

    fn dataset(&mut self, name: &str, data: &CountMatrix) -> Result<()> {
        let path = self.dir.join(name);
        io::write_dataset(&path, data)?;
        self.written.push(path);
        Ok(())
    }
}

fn read_dataset(path: &Path) -> Result<(CountMatrix, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let data = io::parse_dataset(&bytes, &path.display().to_string())?;
    Ok((data, io::sha256_hex(&bytes)))
}

fn mm_config(command: &str, components: Vec<usize>, restarts: usize, mm: &MmControls, common: &Common) -> RunConfig {
    RunConfig {
        command: command.into(),
        family: ModelFamily::Mm,
        mode: mm.mode,
        components,
        delta: mm.delta.clone(),
        alpha: mm.alpha,
        beta: mm.beta,
        tolerance: mm.tolerance,
        max_iterations: mm.max_iterations,
        restarts,
        seed: common.seed,
        init_scheme: mm.init,
        threads: common.threads,
        ..RunConfig::default()
    }
}

fn build_mm_model(cfg: &RunConfig, g: usize) -> Result<MMModel<crate::PoissonGamma>> {
    let family = cfg.family_prior()?;
    let delta = io::resolve_delta(&cfg.delta, g)?;
    MMModel::new(family, delta, PriorSpec::Shared(family.prior()), cfg.mode)
}

fn fit_mm(a: FitMmArgs) -> Result<Vec<PathBuf>> {
    let (data, sha) = read_dataset(&a.data)?;
    let mut cfg = mm_config("fit-mm", vec![a.g], a.restarts, &a.mm, &a.common);
    cfg.dataset_sha256 = Some(sha.clone());
    cfg.validate()?;
    let model = build_mm_model(&cfg, a.g)?;
    let fit = vb::fit(&data, &model, &cfg.fit_config())?;

    let mut doc = ResultDocument::new(DocumentKind::MmFit, &cfg);
    doc.dataset = Some(DatasetSummary::new(&data, Some(sha)));
    let mm_doc = MmFitDoc::from_fit(&fit);
    let (stats, _, _) = StatisticsDoc::compute(&fit.state.phi, &fit.tau_hat)?;
    if let Some(truth_path) = &a.truth {
        let truth = ResultDocument::read(truth_path)?
            .truth
            .ok_or_else(|| Error::Config(format!("{} holds no simulation truth", truth_path.display())))?;
        let rec = evaluate::recovery(
            &fit.state.rates(&model.family),
            &fit.tau_hat,
            &truth.rates_array()?,
            &truth.tau_array()?,
        )?;
        doc.recovery = Some(RecoveryDoc::from(&rec));
    }
    doc.mm = Some(mm_doc);
    doc.statistics = Some(stats);

    let mut out = Output::new(&a.common.out)?;
    out.document("mm_result.json", &doc)?;
    write_mm_plots(&mut out, &doc, &data)?;
    if let Some(rec) = &doc.recovery {
        let mut t = plot::PlotTable {
            notes: vec!["estimated profiles aligned to the truth".into()],
            header: vec!["metric".into(), "value".into()],
            rows: vec![
                vec!["mean_relative_rate_error".into(), rec.mean_relative_rate_error.to_string()],
                vec!["mean_abs_tau_error".into(), rec.mean_abs_tau_error.to_string()],
            ],
        };
        for (k, p) in rec.permutation.iter().enumerate() {
            t.rows.push(vec![format!("true_profile_{}", k + 1), format!("estimated {p}")]);
        }
        out.plot("recovery.csv", &t, &doc)?;
    }
    Ok(out.written)
}

/// theta_curves, histograms, ternary coordinates and per-observation τ̂.
fn write_mm_plots(out: &mut Output, doc: &ResultDocument, data: &CountMatrix) -> Result<()> {
    let mm = doc.mm.as_ref().expect("mm fit");
    let stats = doc.statistics.as_ref().expect("statistics");
    out.plot("theta_curves.csv", &plot::theta_curves(&mm.rates_array()?, data, "profile"), doc)?;
    write_statistics_plots(out, doc, mm, stats, data.row_ids())
}

fn write_statistics_plots(
    out: &mut Output,
    doc: &ResultDocument,
    mm: &MmFitDoc,
    stats: &StatisticsDoc,
    ids: &[String],
) -> Result<()> {
    out.plot("eom_hist.csv", &plot::histogram(&stats.eom_histogram, "extent of membership"), doc)?;
    out.plot(
        "uncertainty_hist.csv",
        &plot::histogram(&stats.uncertainty_histogram, "per-cell classification uncertainty"),
        doc,
    )?;
    let tau = mm.tau_hat_array()?;
    let labels: Vec<String> = (1..=mm.n_profiles).map(|g| format!("tau_{g}")).collect();
    let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    out.plot("tau_hat.csv", &plot::per_observation(ids, &label_refs, &tau), doc)?;
    if mm.n_profiles >= 3 {
        let faces = ternary_faces(mm.n_profiles);
        let coords = ternary_coords(&tau, &faces)?;
        out.plot("ternary_coords.csv", &plot::ternary(&faces, &coords, ids), doc)?;
    }
    Ok(())
}

fn fit_mixture(a: FitMixtureArgs) -> Result<Vec<PathBuf>> {
    let (data, sha) = read_dataset(&a.data)?;
    let cfg = RunConfig {
        command: "fit-mixture".into(),
        family: ModelFamily::Mixture,
        components: vec![a.g],
        em_tolerance: a.em.em_tolerance,
        em_max_iterations: a.em.em_max_iterations,
        restarts: a.restarts,
        seed: a.common.seed,
        threads: a.common.threads,
        dataset_sha256: Some(sha.clone()),
        ..RunConfig::default()
    };
    cfg.validate()?;
    let fit = mixture::fit_em(&data, a.g, &cfg.em_config())?;
    let mut doc = ResultDocument::new(DocumentKind::MixtureFit, &cfg);
    doc.dataset = Some(DatasetSummary::new(&data, Some(sha)));
    let mix = MixtureFitDoc::from_fit(&fit);
    let upper = if a.g > 1 { 1.0 - 1.0 / a.g as f64 } else { 1.0 };
    let unc_hist = evaluate::Histogram::new(&mix.uncertainty, 0.0, upper, io::document::HISTOGRAM_BINS)?;
    doc.mixture = Some(mix);

    let mut out = Output::new(&a.common.out)?;
    out.document("mixture_result.json", &doc)?;
    out.plot("mixture_rates.csv", &plot::theta_curves(&fit.model.rates, &data, "group"), &doc)?;
    out.plot(
        "mixture_uncertainty_hist.csv",
        &plot::histogram(&(&unc_hist).into(), "per-observation classification uncertainty"),
        &doc,
    )?;
    Ok(out.written)
}

fn sweep(a: SweepArgs) -> Result<Vec<PathBuf>> {
    if a.g_min == 0 || a.g_max < a.g_min {
        return Err(Error::Config(format!("bad component range {}..={}", a.g_min, a.g_max)));
    }
    let (data, sha) = read_dataset(&a.data)?;
    let components: Vec<usize> = (a.g_min..=a.g_max).collect();
    let mut cfg = mm_config("sweep", components.clone(), a.restarts, &a.mm, &a.common);
    cfg.family = ModelFamily::Both;
    cfg.em_tolerance = a.em.em_tolerance;
    cfg.em_max_iterations = a.em.em_max_iterations;
    cfg.mc_draws = a.draws;
    cfg.holdout_fraction = a.holdout_fraction;
    cfg.dataset_sha256 = Some(sha.clone());
    cfg.validate()?;
    if cfg.delta.trim() != "1/G" {
        return Err(Error::Config("a sweep needs delta = 1/G".into()));
    }
    let sweep_cfg = SweepConfig {
        components,
        family: cfg.family_prior()?,
        mode: cfg.mode,
        mm: cfg.fit_config(),
        em: cfg.em_config(),
        mc: cfg.mc_config(),
        seed: cfg.seed,
    };
    let result = select::sweep(&data, &sweep_cfg)?;
    let mut doc = ResultDocument::new(DocumentKind::Sweep, &cfg);
    doc.dataset = Some(DatasetSummary::new(&data, Some(sha)));
    let sweep_doc = SweepDoc::from_result(&result);
    let table = plot::sweep(&sweep_doc);
    doc.sweep = Some(sweep_doc);

    let mut out = Output::new(&a.common.out)?;
    out.document("sweep_result.json", &doc)?;
    out.plot("sweep.csv", &table, &doc)?;
    Ok(out.written)
}

/// Profile rates `base_g · u_gm` with `u_gm ~ U[1 − v, 1 + v]`.
pub fn jittered_rates(base: &[f64], n_attr: usize, variation: f64, seed: u64) -> Result<Array2<f64>> {
    if !(0.0..1.0).contains(&variation) {
        return Err(Error::Config(format!("variation must be in [0, 1), got {variation}")));
    }
    if base.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::Config(format!("base rates must be positive: {base:?}")));
    }
    let mut rng = rng_for(seed, TRUTH_STREAM);
    Ok(Array2::from_shape_fn((base.len(), n_attr), |(g, _)| {
        base[g] * (1.0 + variation * (2.0 * rng.random::<f64>() - 1.0))
    }))
}

fn simulate(a: SimulateArgs) -> Result<Vec<PathBuf>> {
    if a.g == 0 {
        return Err(Error::Config("G must be positive".into()));
    }
    let base = a.rates.clone().unwrap_or_else(|| (0..a.g).map(|g| 2.0 * 3f64.powi(g as i32)).collect());
    if base.len() != a.g {
        return Err(Error::Config(format!("{} base rates for G = {}", base.len(), a.g)));
    }
    let delta = io::resolve_delta(&a.delta, a.g)?;
    let cfg = RunConfig {
        command: "simulate".into(),
        components: vec![a.g],
        delta: a.delta.clone(),
        seed: a.common.seed,
        threads: a.common.threads,
        ..RunConfig::default()
    };
    let rates = jittered_rates(&base, a.m, a.variation, a.common.seed)?;
    let sim = vb::generate(a.n, &crate::PoissonGamma::default(), &rates, &delta, a.common.seed)?;

    let mut doc = ResultDocument::new(DocumentKind::Simulation, &cfg);
    let bytes = io::dataset_to_bytes(&sim.data)?;
    doc.dataset = Some(DatasetSummary::new(&sim.data, Some(io::sha256_hex(&bytes))));
    doc.truth = Some(TruthDoc {
        rates: rows(&rates),
        delta,
        tau: rows(&sim.tau),
        z: sim.z.rows().into_iter().map(|r| r.iter().map(|g| g + 1).collect()).collect(),
    });

    let mut out = Output::new(&a.common.out)?;
    out.dataset("data.csv", &sim.data)?;
    out.document("truth.json", &doc)?;
    out.plot("truth_rates.csv", &plot::theta_curves(&rates, &sim.data, "profile"), &doc)?;
    let labels: Vec<String> = (1..=a.g).map(|g| format!("tau_{g}")).collect();
    let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    out.plot("truth_tau.csv", &plot::per_observation(sim.data.row_ids(), &label_refs, &sim.tau), &doc)?;
    Ok(out.written)
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<Vec<PathBuf>> {
    let source = ResultDocument::read(&a.result)?;
    let mm = source
        .mm
        .clone()
        .ok_or_else(|| Error::Config(format!("{} is not a mixed membership fit", a.result.display())))?;
    let (stats, _, _) = StatisticsDoc::compute(&mm.phi_array()?, &mm.tau_hat_array()?)?;
    let mut doc = ResultDocument::new(DocumentKind::Evaluation, &source.config);
    doc.dataset = source.dataset.clone();
    doc.statistics = Some(stats.clone());

    let dir = a.out.unwrap_or_else(|| a.result.parent().unwrap_or(Path::new(".")).to_path_buf());
    let mut out = Output::new(&dir)?;
    out.document("evaluation.json", &doc)?;
    let ids: Vec<String> = match &source.dataset {
        Some(d) => d.row_ids.clone(),
        None => (1..=mm.tau_hat.len()).map(|n| format!("r{n}")).collect(),
    };
    write_statistics_plots(&mut out, &doc, &mm, &stats, &ids)?;
    let mut sets = plot::PlotTable {
        notes: vec!["profile sets of MAP profiles, by descending count".into()],
        header: vec!["profile_set".into(), "count".into()],
        rows: Vec::new(),
    };
    for c in &stats.profile_set_counts {
        let zero_based: Vec<usize> = c.set.iter().map(|g| g - 1).collect();
        sets.rows.push(vec![evaluate::format_profile_set(&zero_based), c.count.to_string()]);
    }
    out.plot("profile_sets.csv", &sets, &doc)?;
    Ok(out.written)
}

fn report(a: ReportArgs) -> Result<Vec<PathBuf>> {
    let mm_doc = ResultDocument::read(&a.mm)?;
    let mix_doc = ResultDocument::read(&a.mixture)?;
    let mm = mm_doc
        .mm
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{} is not a mixed membership fit", a.mm.display())))?;
    let mix = mix_doc
        .mixture
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{} is not a mixture fit", a.mixture.display())))?;
    let sha = |d: &ResultDocument| d.dataset.as_ref().and_then(|s| s.sha256.clone());
    if sha(&mm_doc) != sha(&mix_doc) {
        return Err(Error::Config("the two fits were run on different datasets".into()));
    }
    let (stats, assignment, _) = StatisticsDoc::compute(&mm.phi_array()?, &mm.tau_hat_array()?)?;
    if stats.profile_sets.len() != mix.map_group.len() {
        return Err(Error::Shape("fits cover different numbers of observations".into()));
    }
    let groups: Vec<usize> = mix.map_group.iter().map(|g| g - 1).collect();
    let tab = evaluate::cross_tab(&groups, &assignment.profile_sets, mix.n_groups)?;

    let cfg = RunConfig {
        command: "report".into(),
        family: ModelFamily::Both,
        components: vec![mm.n_profiles, mix.n_groups],
        ..mm_doc.config.clone()
    };
    let mut doc = ResultDocument::new(DocumentKind::Report, &cfg);
    doc.dataset = mm_doc.dataset.clone();
    doc.crosstab = Some(CrossTabDoc::from(&tab));

    let dir = a.out.unwrap_or_else(|| a.mm.parent().unwrap_or(Path::new(".")).to_path_buf());
    let mut out = Output::new(&dir)?;
    out.document("report.json", &doc)?;
    out.plot("crosstab.csv", &plot::crosstab(&tab), &doc)?;
    Ok(out.written)
}

fn fetch_race(a: FetchArgs) -> Result<Vec<PathBuf>> {
    let bytes = match &a.xlsx {
        Some(p) => fs::read(p).map_err(|e| Error::io(p, e))?,
        None => fetch::download(&a.url)?,
    };
    let data = fetch::table_from_cells(&fetch::xlsx_cells(bytes)?, fetch::RACE_COLS, a.cumulative)?;
    fetch::verify_race_shape(&data)?;
    let mut out = Output::new(&a.out)?;
    out.dataset("race.csv", &data)?;
    Ok(out.written)
}

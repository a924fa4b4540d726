//! Command-line front end. Every subcommand computes all of its outputs before
//! writing any file, and writes each file atomically.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emergence::{
    detect_emergence, threshold_report, EmergenceFit, EmergenceOptions, Family, SmoothKind,
};
use crate::ingest::{
    parse_eval_log, parse_manifest, parse_runs, validate_dataset, write_eval_log, write_manifest,
    write_runs, CheckpointPoint, DatasetDescriptor,
};
use crate::metrics::{argmax_tie_fraction, normalize_value, random_baseline, score, MetricKind};
use crate::report::{
    export_curves, render_correlation_table, render_threshold_summary, sample_overlay,
    sanitize_file_stem, write_atomic, CurveSeries, TableFormat,
};
use crate::scaling::{
    fit_scaling_law, loss_threshold_to_model_size, points_at_budget, ScalingFit, ScalingOptions,
};
use crate::simulate::{simulate, simulate_eval_logs, SimConfig};
use crate::stats::{correlation_table, BootstrapOptions, CorrelationOptions, CorrelationTable};

/// Share of argmax ties above which `metrics` warns.
const TIE_WARNING_FRACTION: f64 = 0.05;

#[derive(Debug, Parser)]
#[command(
    name = "losslens",
    version,
    about = "Relate pre-training loss to downstream task performance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a runs table against its manifest and flag suspicious datasets.
    Validate(ValidateArgs),
    /// Score example-level evaluation logs.
    Metrics(MetricsArgs),
    /// Spearman/Pearson correlation between loss and each dataset's metric.
    Correlate(CorrelateArgs),
    /// Fit L(N) = L_inf + (N0/N)^alpha across runs at a fixed token budget.
    FitScaling(FitScalingArgs),
    /// Fit threshold models and decide which datasets are emergent in loss.
    DetectEmergence(DetectArgs),
    /// Convert a loss threshold into a model size through a scaling fit.
    TranslateThreshold(TranslateArgs),
    /// Generate a synthetic fleet with known thresholds.
    Simulate(SimulateArgs),
    /// Write correlation and threshold tables plus per-dataset curve plots.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct Inputs {
    /// Checkpoint table (CSV)
    #[arg(long)]
    runs: PathBuf,
    /// Dataset manifest (CSV)
    #[arg(long)]
    manifest: PathBuf,
}

impl Inputs {
    fn load(&self) -> Result<(Vec<DatasetDescriptor>, Vec<CheckpointPoint>)> {
        let manifest = parse_manifest(&self.manifest)?;
        let points = parse_runs(&self.runs, &manifest)?;
        Ok((manifest, points))
    }
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Write the report here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// Dataset manifest (CSV)
    #[arg(long)]
    manifest: PathBuf,
    /// Single evaluation log (JSONL); requires --dataset
    #[arg(long, conflicts_with = "eval_index", requires = "dataset")]
    log: Option<PathBuf>,
    /// Dataset the single log belongs to
    #[arg(long)]
    dataset: Option<String>,
    /// Index CSV (run_id,tokens_trained,dataset,path) for batch scoring; requires --runs and --out
    #[arg(long, requires_all = ["runs", "out"])]
    eval_index: Option<PathBuf>,
    /// Checkpoint table whose metric cells are replaced by the batch scores
    #[arg(long)]
    runs: Option<PathBuf>,
    /// Metric: accuracy, exact_match, correct_choice_prob, brier, brier_per_option [default: the dataset's manifest metric]
    #[arg(long)]
    metric: Option<MetricKind>,
    /// Output file [default: standard output for a single log]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BootstrapArgs {
    /// Bootstrap replicas for confidence intervals; 0 disables them
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    /// Confidence level of bootstrap intervals
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    /// Seed for all resampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl BootstrapArgs {
    fn options(&self) -> Option<BootstrapOptions> {
        (self.bootstrap > 0).then_some(BootstrapOptions {
            replicas: self.bootstrap,
            confidence: self.confidence,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Args)]
struct CorrelateArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Datasets to include, comma separated [default: all in the manifest]
    #[arg(long, value_delimiter = ',')]
    datasets: Option<Vec<String>>,
    /// One row per (dataset, run) instead of pooling runs
    #[arg(long)]
    per_run: bool,
    #[command(flatten)]
    bootstrap: BootstrapArgs,
    /// Table format: markdown or csv
    #[arg(long, default_value = "markdown")]
    format: TableFormat,
    /// Output file [default: standard output]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitScalingArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Token budget to slice at [default: largest budget reached by every run]
    #[arg(long)]
    tokens: Option<f64>,
    /// Coarse grid cells over L_inf before refinement
    #[arg(long, default_value_t = 400)]
    grid_cells: usize,
    /// Output JSON [default: standard output]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmergenceArgs {
    /// Improvement family below the threshold: hinge_linear or hinge_exponential
    #[arg(long, default_value = "hinge_linear")]
    family: Family,
    /// Threshold grid spacing in nats
    #[arg(long, default_value_t = crate::emergence::DEFAULT_RESOLUTION)]
    resolution: f64,
    /// Smooth null model: linear or logistic
    #[arg(long, default_value = "linear")]
    smooth: SmoothKind,
    /// BIC margin the threshold model must win by
    #[arg(long, default_value_t = crate::emergence::DEFAULT_BIC_MARGIN)]
    bic_margin: f64,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Dataset to analyse; repeatable [default: every dataset in the manifest]
    #[arg(long)]
    dataset: Vec<String>,
    #[command(flatten)]
    model: EmergenceArgs,
    #[command(flatten)]
    bootstrap: BootstrapArgs,
    /// Output JSON [default: standard output]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TranslateArgs {
    /// Loss threshold
    #[arg(long, allow_hyphen_values = true)]
    eta: f64,
    /// Scaling fit JSON written by fit-scaling
    #[arg(long)]
    scaling: PathBuf,
    /// Output JSON [default: standard output]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Simulation config (JSON) [default: built-in three-run reference fleet]
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out_dir: PathBuf,
    /// Seed [default: the config's noise.seed, which defaults to 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Also write this many examples per checkpoint and dataset as evaluation logs; 0 disables
    #[arg(long, default_value_t = 0)]
    eval_examples: usize,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Emergence fits written by detect-emergence
    #[arg(long)]
    fits: Option<PathBuf>,
    /// Scaling fit written by fit-scaling, for implied model sizes
    #[arg(long)]
    scaling: Option<PathBuf>,
    /// One correlation row per (dataset, run)
    #[arg(long)]
    per_run: bool,
    #[command(flatten)]
    bootstrap: BootstrapArgs,
    /// Table format: markdown or csv
    #[arg(long, default_value = "markdown")]
    format: TableFormat,
    /// Output directory
    #[arg(long)]
    out_dir: PathBuf,
}

/// One dataset's entry in `fits.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFit {
    pub dataset: String,
    pub metric: MetricKind,
    #[serde(flatten)]
    pub fit: EmergenceFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitsFile {
    pub fits: Vec<DatasetFit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFile {
    pub tokens_trained: f64,
    #[serde(flatten)]
    pub fit: ScalingFit,
}

/// Runs the CLI on `argv` (program name first) and returns the exit code:
/// 0 on success, 1 on domain errors, 2 on usage errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Validate(a) => cmd_validate(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Correlate(a) => cmd_correlate(a),
        Command::FitScaling(a) => cmd_fit_scaling(a),
        Command::DetectEmergence(a) => cmd_detect(a),
        Command::TranslateThreshold(a) => cmd_translate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_file(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn descriptor<'a>(manifest: &'a [DatasetDescriptor], name: &str) -> Result<&'a DatasetDescriptor> {
    manifest
        .iter()
        .find(|d| d.name() == name)
        .ok_or_else(|| anyhow!("dataset '{name}' is not in the manifest"))
}

fn cmd_validate(a: ValidateArgs) -> Result<()> {
    let (manifest, points) = a.inputs.load()?;
    let report = validate_dataset(&points, &manifest);
    emit(a.out.as_deref(), &format!("{report}"))
}

#[derive(Debug, Serialize)]
struct ScoreOutput<'a> {
    dataset: &'a str,
    metric: MetricKind,
    value: f64,
    n_examples: usize,
    higher_is_better: bool,
    random_baseline: f64,
    normalized: Option<f64>,
}

fn warn_ties(dataset: &str, fraction: f64) {
    if fraction > TIE_WARNING_FRACTION {
        eprintln!(
            "warning: {dataset}: {:.1}% of examples have tied top probabilities (broken toward the lowest index)",
            100.0 * fraction
        );
    }
}

fn cmd_metrics(a: MetricsArgs) -> Result<()> {
    let manifest = parse_manifest(&a.manifest)?;
    match (&a.log, &a.eval_index) {
        (Some(log), None) => {
            let name = a.dataset.as_deref().expect("clap enforces --dataset");
            let d = descriptor(&manifest, name)?;
            let kind = a.metric.unwrap_or_else(|| d.metric().into());
            let outcomes = parse_eval_log(log, d)?;
            let value = score(&outcomes, kind, d)?;
            warn_ties(name, argmax_tie_fraction(&outcomes));
            let r = random_baseline(d, kind)?;
            let out = ScoreOutput {
                dataset: name,
                metric: kind,
                value: value.value,
                n_examples: value.n_examples,
                higher_is_better: value.higher_is_better,
                random_baseline: r,
                normalized: normalize_value(kind, value.value, r).ok(),
            };
            emit(a.out.as_deref(), &json(&out))
        }
        (None, Some(index)) => {
            let runs = a.runs.as_deref().expect("clap enforces --runs");
            let out = a.out.as_deref().expect("clap enforces --out");
            let text = score_index(index, runs, &manifest, a.metric)?;
            write_file(out, text.as_bytes())
        }
        _ => bail!("give either --log (with --dataset) or --eval-index"),
    }
}

#[derive(Debug, Deserialize)]
struct IndexRow {
    run_id: String,
    tokens_trained: f64,
    dataset: String,
    path: PathBuf,
}

fn score_index(
    index: &Path,
    runs: &Path,
    manifest: &[DatasetDescriptor],
    kind: Option<MetricKind>,
) -> Result<String> {
    let mut points = parse_runs(runs, manifest)?;
    let base = index.parent().unwrap_or(Path::new("."));
    let mut rdr =
        csv::Reader::from_path(index).with_context(|| format!("reading {}", index.display()))?;
    let rows: Vec<IndexRow> = rdr
        .deserialize()
        .collect::<Result<_, _>>()
        .with_context(|| format!("parsing {}", index.display()))?;
    if rows.is_empty() {
        bail!("{} lists no evaluation logs", index.display());
    }
    let scored: Vec<(usize, f64, f64, usize)> = rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| -> Result<(usize, f64, f64, usize)> {
            let d = descriptor(manifest, &row.dataset)?;
            let kind = kind.unwrap_or_else(|| d.metric().into());
            let outcomes = parse_eval_log(&base.join(&row.path), d)?;
            let v = score(&outcomes, kind, d).with_context(|| format!("{}", row.path.display()))?;
            let n = outcomes.len();
            Ok((i, v.value, argmax_tie_fraction(&outcomes) * n as f64, n))
        })
        .collect::<Result<_>>()?;
    let mut ties: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (i, value, tied, n) in scored {
        let row = &rows[i];
        let point = points
            .iter_mut()
            .find(|p| p.run_id == row.run_id && p.tokens_trained == row.tokens_trained)
            .ok_or_else(|| {
                anyhow!(
                    "index row {}: no checkpoint ({}, {}) in {}",
                    i + 2,
                    row.run_id,
                    row.tokens_trained,
                    runs.display()
                )
            })?;
        point.metrics.insert(row.dataset.clone(), value);
        let t = ties.entry(row.dataset.as_str()).or_default();
        t.0 += tied;
        t.1 += n;
    }
    for (dataset, (tied, n)) in &ties {
        if *n > 0 {
            warn_ties(dataset, tied / *n as f64);
        }
    }
    let names: Vec<&str> = manifest.iter().map(|d| d.name()).collect();
    Ok(write_runs(&points, &names))
}

fn correlations(
    inputs: (&[DatasetDescriptor], &[CheckpointPoint]),
    datasets: Option<&[String]>,
    per_run: bool,
    bootstrap: Option<BootstrapOptions>,
) -> Result<CorrelationTable> {
    let (manifest, points) = inputs;
    let table = correlation_table(
        points,
        manifest,
        datasets,
        &CorrelationOptions { per_run, bootstrap },
    )?;
    for s in &table.skipped {
        let label = match &s.run_id {
            Some(r) => format!("{} [{r}]", s.dataset),
            None => s.dataset.clone(),
        };
        eprintln!("warning: skipped {label}: {}", s.reason);
    }
    if table.rows.is_empty() {
        bail!("no dataset has enough points to correlate");
    }
    Ok(table)
}

fn cmd_correlate(a: CorrelateArgs) -> Result<()> {
    let (manifest, points) = a.inputs.load()?;
    let table = correlations(
        (&manifest, &points),
        a.datasets.as_deref(),
        a.per_run,
        a.bootstrap.options(),
    )?;
    emit(
        a.out.as_deref(),
        &render_correlation_table(&table.rows, a.format),
    )
}

fn cmd_fit_scaling(a: FitScalingArgs) -> Result<()> {
    let (_, points) = a.inputs.load()?;
    let (budget, pairs) = points_at_budget(&points, a.tokens)?;
    let opts = ScalingOptions {
        grid_cells: a.grid_cells,
        ..ScalingOptions::default()
    };
    let fit = fit_scaling_law(&pairs, &opts)?;
    emit(
        a.out.as_deref(),
        &json(&ScalingFile {
            tokens_trained: budget,
            fit,
        }),
    )
}

/// `(loss, normalized metric)` pairs of one dataset, given its baseline `r`.
fn normalized_points(
    points: &[CheckpointPoint],
    d: &DatasetDescriptor,
    kind: MetricKind,
    r: f64,
) -> Result<Vec<(f64, f64)>> {
    points
        .iter()
        .filter_map(|p| p.metric(d.name()).map(|v| (p.loss, v)))
        .map(|(l, v)| Ok((l, normalize_value(kind, v, r)?)))
        .collect()
}

fn cmd_detect(a: DetectArgs) -> Result<()> {
    let (manifest, points) = a.inputs.load()?;
    let explicit = !a.dataset.is_empty();
    let selected: Vec<&DatasetDescriptor> = if explicit {
        a.dataset
            .iter()
            .map(|n| descriptor(&manifest, n))
            .collect::<Result<_>>()?
    } else {
        manifest.iter().collect()
    };
    let bootstrap = a
        .bootstrap
        .options()
        .map(|b| (b.replicas, b.confidence, b.seed));
    let results: Vec<Result<DatasetFit>> = selected
        .par_iter()
        .map(|d| {
            let kind: MetricKind = d.metric().into();
            let r = random_baseline(d, kind)?;
            let pairs = normalized_points(&points, d, kind, r)?;
            let opts = EmergenceOptions {
                family: a.model.family,
                resolution: a.model.resolution,
                smooth: a.model.smooth,
                bic_margin: a.model.bic_margin,
                baseline: r,
                bootstrap,
            };
            let fit = detect_emergence(&pairs, &opts)
                .with_context(|| format!("dataset '{}'", d.name()))?;
            Ok(DatasetFit {
                dataset: d.name().to_string(),
                metric: kind,
                fit,
            })
        })
        .collect();
    let mut fits = Vec::new();
    for r in results {
        match r {
            Ok(f) => fits.push(f),
            Err(e) if !explicit => eprintln!("warning: skipped {e:#}"),
            Err(e) => return Err(e),
        }
    }
    if fits.is_empty() {
        bail!("no dataset could be fitted");
    }
    emit(a.out.as_deref(), &json(&FitsFile { fits }))
}

#[derive(Debug, Serialize)]
struct TranslateOutput {
    eta: f64,
    model_params: f64,
}

fn cmd_translate(a: TranslateArgs) -> Result<()> {
    let scaling: ScalingFile = read_json(&a.scaling)?;
    let n = loss_threshold_to_model_size(&scaling.fit, a.eta)?;
    emit(
        a.out.as_deref(),
        &json(&TranslateOutput {
            eta: a.eta,
            model_params: n,
        }),
    )
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let config = match &a.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            SimConfig::from_json(&text)?
        }
        None => SimConfig::reference_fleet(),
    };
    let seed = a.seed.unwrap_or(config.noise.seed);
    let sim = simulate(&config, seed)?;
    let names: Vec<&str> = config.tasks.iter().map(|t| t.name()).collect();

    let mut files: Vec<(PathBuf, String)> = vec![
        (
            a.out_dir.join("manifest.csv"),
            write_manifest(&sim.manifest),
        ),
        (a.out_dir.join("runs.csv"), write_runs(&sim.points, &names)),
        (a.out_dir.join("truth.json"), json(&sim)),
        (a.out_dir.join("config.json"), json(&config)),
    ];
    if a.eval_examples > 0 {
        let logs = simulate_eval_logs(&config, &sim.points, a.eval_examples, seed);
        let mut index = csv::Writer::from_writer(Vec::new());
        index.write_record(["run_id", "tokens_trained", "dataset", "path"])?;
        for log in &logs {
            let rel = PathBuf::from(sanitize_file_stem(&log.run_id))
                .join(sanitize_file_stem(&log.dataset))
                .join(format!("{}.jsonl", log.tokens_trained));
            let rel_str = rel.to_string_lossy().replace('\\', "/");
            index.write_record([
                log.run_id.as_str(),
                &log.tokens_trained.to_string(),
                log.dataset.as_str(),
                &rel_str,
            ])?;
            files.push((
                a.out_dir.join("evals").join(&rel),
                write_eval_log(&log.outcomes),
            ));
        }
        let index = String::from_utf8(index.into_inner().map_err(|e| anyhow!("{e}"))?)?;
        files.push((a.out_dir.join("evals").join("index.csv"), index));
    }
    for (path, text) in &files {
        write_file(path, text.as_bytes())?;
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let (manifest, points) = a.inputs.load()?;
    let fits: Option<FitsFile> = a.fits.as_deref().map(read_json).transpose()?;
    let scaling: Option<ScalingFile> = a.scaling.as_deref().map(read_json).transpose()?;
    let ext = a.format.extension();

    let table = correlations((&manifest, &points), None, a.per_run, a.bootstrap.options())?;
    let mut files = vec![(
        a.out_dir.join(format!("correlations.{ext}")),
        render_correlation_table(&table.rows, a.format),
    )];
    if let Some(f) = &fits {
        let pairs: Vec<(String, EmergenceFit)> = f
            .fits
            .iter()
            .map(|d| (d.dataset.clone(), d.fit.clone()))
            .collect();
        let rows = threshold_report(&pairs, scaling.as_ref().map(|s| &s.fit))?;
        files.push((
            a.out_dir.join(format!("thresholds.{ext}")),
            render_threshold_summary(&rows, a.format),
        ));
    }

    let series: Vec<CurveSeries> = manifest
        .iter()
        .filter(|d| points.iter().any(|p| p.metric(d.name()).is_some()))
        .map(|d| {
            let kind: MetricKind = d.metric().into();
            let overlay = fits
                .as_ref()
                .and_then(|f| f.fits.iter().find(|x| x.dataset == d.name()))
                .map(|x| sample_overlay(&x.fit, x.metric, 200));
            Ok(CurveSeries::from_checkpoints(
                d.name(),
                &points,
                random_baseline(d, kind)?,
                overlay,
            ))
        })
        .collect::<Result<_>>()?;

    for (path, text) in &files {
        write_file(path, text.as_bytes())?;
    }
    export_curves(&series, &a.out_dir.join("curves")).context("exporting curves")?;
    Ok(())
}

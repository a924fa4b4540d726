//! Loss/performance correlation statistics.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::ingest::{CheckpointPoint, DatasetDescriptor};
use crate::stream_rng;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 points, got {0}")]
    TooFew(usize),
    #[error("constant input vector")]
    Constant,
    #[error("non-finite input value")]
    NonFinite,
    #[error("{skipped} of {replicas} bootstrap resamples were degenerate")]
    DegenerateBootstrap { skipped: usize, replicas: usize },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Pearson,
    Spearman,
}

impl Statistic {
    pub fn compute(self, x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
        match self {
            Statistic::Pearson => pearson(x, y),
            Statistic::Spearman => spearman(x, y),
        }
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFew(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Constant);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with tied values sharing the average of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson on average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    pub confidence: f64,
    pub replicas: usize,
    /// Resamples dropped because a resampled vector was constant.
    pub skipped: usize,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Percentile interval of `statistic` over paired resamples.
///
/// Replica `i` draws from its own stream under `seed`, so the interval is the
/// same whether replicas run sequentially or in parallel.
pub fn bootstrap_ci(
    x: &[f64],
    y: &[f64],
    statistic: Statistic,
    replicas: usize,
    confidence: f64,
    seed: u64,
) -> Result<BootstrapCi, StatsError> {
    statistic.compute(x, y)?;
    if replicas < 100 {
        return Err(StatsError::Invalid(format!(
            "bootstrap needs at least 100 replicas, got {replicas}"
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(StatsError::Invalid(format!(
            "confidence must be in (0, 1), got {confidence}"
        )));
    }
    let n = x.len();
    let draws: Vec<Option<f64>> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let mut xs = Vec::with_capacity(n);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let k = rng.gen_range(0..n);
                xs.push(x[k]);
                ys.push(y[k]);
            }
            statistic.compute(&xs, &ys).ok()
        })
        .collect();
    percentile_interval(&draws, confidence)
}

/// Percentile interval over replica statistics; `None` marks a skipped replica.
pub fn percentile_interval(
    draws: &[Option<f64>],
    confidence: f64,
) -> Result<BootstrapCi, StatsError> {
    let replicas = draws.len();
    let mut values: Vec<f64> = draws.iter().flatten().copied().collect();
    let skipped = replicas - values.len();
    if values.is_empty() || skipped * 2 > replicas {
        return Err(StatsError::DegenerateBootstrap { skipped, replicas });
    }
    values.sort_by(f64::total_cmp);
    let alpha = (1.0 - confidence) / 2.0;
    Ok(BootstrapCi {
        lo: quantile(&values, alpha),
        hi: quantile(&values, 1.0 - alpha),
        confidence,
        replicas,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationResult {
    pub dataset: String,
    /// Set when correlations are computed per run instead of pooled.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub spearman: f64,
    pub pearson: f64,
    pub n_points: usize,
    pub spearman_ci: Option<(f64, f64)>,
    pub pearson_ci: Option<(f64, f64)>,
}

impl CorrelationResult {
    pub fn label(&self) -> String {
        match &self.run_id {
            Some(run) => format!("{} [{run}]", self.dataset),
            None => self.dataset.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedDataset {
    pub dataset: String,
    pub run_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub replicas: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            replicas: 2000,
            confidence: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrelationOptions {
    /// One row per (dataset, run) instead of pooling all runs.
    pub per_run: bool,
    pub bootstrap: Option<BootstrapOptions>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CorrelationTable {
    pub rows: Vec<CorrelationResult>,
    pub skipped: Vec<SkippedDataset>,
}

/// Correlates loss with each selected dataset's metric, in manifest order.
///
/// Datasets with fewer than 3 usable points (or degenerate data) are listed in
/// `skipped` rather than failing the table.
pub fn correlation_table(
    points: &[CheckpointPoint],
    manifest: &[DatasetDescriptor],
    datasets: Option<&[String]>,
    options: &CorrelationOptions,
) -> Result<CorrelationTable, StatsError> {
    if let Some(sel) = datasets {
        if let Some(missing) = sel
            .iter()
            .find(|s| !manifest.iter().any(|d| d.name() == *s))
        {
            return Err(StatsError::Invalid(format!(
                "dataset '{missing}' is not in the manifest"
            )));
        }
    }
    let mut runs: Vec<&str> = points.iter().map(|p| p.run_id.as_str()).collect();
    runs.sort_unstable();
    runs.dedup();

    let mut table = CorrelationTable::default();
    for d in manifest {
        if datasets.is_some_and(|sel| !sel.iter().any(|s| s == d.name())) {
            continue;
        }
        let groups: Vec<Option<&str>> = if options.per_run {
            runs.iter().map(|r| Some(*r)).collect()
        } else {
            vec![None]
        };
        for run in groups {
            let (x, y): (Vec<f64>, Vec<f64>) = points
                .iter()
                .filter(|p| run.is_none_or(|r| p.run_id == r))
                .filter_map(|p| p.metric(d.name()).map(|v| (p.loss, v)))
                .unzip();
            let skip = |reason: String| SkippedDataset {
                dataset: d.name().to_string(),
                run_id: run.map(str::to_string),
                reason,
            };
            if x.len() < 3 {
                table
                    .skipped
                    .push(skip(format!("only {} point(s), need at least 3", x.len())));
                continue;
            }
            let (s, p) = match (spearman(&x, &y), pearson(&x, &y)) {
                (Ok(s), Ok(p)) => (s, p),
                (Err(e), _) | (_, Err(e)) => {
                    table.skipped.push(skip(e.to_string()));
                    continue;
                }
            };
            let (mut spearman_ci, mut pearson_ci) = (None, None);
            if let Some(b) = options.bootstrap {
                let ci = |stat, est: f64| {
                    bootstrap_ci(&x, &y, stat, b.replicas, b.confidence, b.seed)
                        .map(|ci| (ci.lo.min(est), ci.hi.max(est)))
                };
                match (ci(Statistic::Spearman, s), ci(Statistic::Pearson, p)) {
                    (Ok(a), Ok(b)) => {
                        spearman_ci = Some(a);
                        pearson_ci = Some(b);
                    }
                    (Err(e), _) | (_, Err(e)) => {
                        table.skipped.push(skip(format!("bootstrap failed: {e}")));
                        continue;
                    }
                }
            }
            table.rows.push(CorrelationResult {
                dataset: d.name().to_string(),
                run_id: run.map(str::to_string),
                spearman: s,
                pearson: p,
                n_points: x.len(),
                spearman_ci,
                pearson_ci,
            });
        }
    }
    Ok(table)
}

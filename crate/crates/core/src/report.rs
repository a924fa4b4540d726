//! Text and file renderers: correlation tables, threshold summaries and
//! performance-vs-loss curve exports (CSV + standalone SVG).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::emergence::{normalized_performance_model, EmergenceFit, SizeThreshold, ThresholdRow};
use crate::ingest::CheckpointPoint;
use crate::metrics::{denormalize_value, MetricKind};
use crate::stats::CorrelationResult;

const MISSING: &str = "—";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TableFormat {
    #[default]
    Markdown,
    Csv,
}

impl FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            _ => Err(format!(
                "unknown table format '{s}' (expected markdown or csv)"
            )),
        }
    }
}

impl TableFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Markdown => "md",
            TableFormat::Csv => "csv",
        }
    }
}

fn fixed3(x: f64) -> String {
    let s = format!("{x:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

/// Four significant figures; scientific notation outside `[1e-3, 1e5)`.
pub fn fmt_sig4(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.000".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-3..5).contains(&mag) {
        return format!("{x:.3e}");
    }
    let decimals = (3 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn md_cell(s: &str) -> String {
    s.replace('|', "\\|")
}

fn interval_md(ci: Option<(f64, f64)>, fmt: fn(f64) -> String) -> String {
    match ci {
        Some((lo, hi)) => format!("[{}, {}]", fmt(lo), fmt(hi)),
        None => MISSING.into(),
    }
}

fn interval_csv(ci: Option<(f64, f64)>, fmt: fn(f64) -> String) -> [String; 2] {
    match ci {
        Some((lo, hi)) => [fmt(lo), fmt(hi)],
        None => [String::new(), String::new()],
    }
}

/// Spearman/Pearson table, rows in input order. CI columns appear only when
/// at least one row carries an interval.
pub fn render_correlation_table(results: &[CorrelationResult], format: TableFormat) -> String {
    let with_ci = results
        .iter()
        .any(|r| r.spearman_ci.is_some() || r.pearson_ci.is_some());
    let mut out = String::new();
    match format {
        TableFormat::Markdown => {
            if with_ci {
                out.push_str("| Dataset | Spearman | Spearman CI | Pearson | Pearson CI |\n");
                out.push_str("|---|---:|:---:|---:|:---:|\n");
            } else {
                out.push_str("| Dataset | Spearman | Pearson |\n");
                out.push_str("|---|---:|---:|\n");
            }
            for r in results {
                let label = md_cell(&r.label());
                if with_ci {
                    let _ = writeln!(
                        out,
                        "| {label} | {} | {} | {} | {} |",
                        fixed3(r.spearman),
                        interval_md(r.spearman_ci, fixed3),
                        fixed3(r.pearson),
                        interval_md(r.pearson_ci, fixed3)
                    );
                } else {
                    let _ = writeln!(
                        out,
                        "| {label} | {} | {} |",
                        fixed3(r.spearman),
                        fixed3(r.pearson)
                    );
                }
            }
        }
        TableFormat::Csv => {
            out.push_str("dataset,spearman,pearson");
            if with_ci {
                out.push_str(",spearman_lo,spearman_hi,pearson_lo,pearson_hi");
            }
            out.push('\n');
            for r in results {
                let _ = write!(
                    out,
                    "{},{},{}",
                    csv_field(&r.label()),
                    fixed3(r.spearman),
                    fixed3(r.pearson)
                );
                if with_ci {
                    let [a, b] = interval_csv(r.spearman_ci, fixed3);
                    let [c, d] = interval_csv(r.pearson_ci, fixed3);
                    let _ = write!(out, ",{a},{b},{c},{d}");
                }
                out.push('\n');
            }
        }
    }
    out
}

fn size_cell(s: Option<SizeThreshold>) -> String {
    match s {
        Some(SizeThreshold::Reachable(n)) => fmt_sig4(n),
        Some(SizeThreshold::Unreachable) => "unreachable".into(),
        None => MISSING.into(),
    }
}

/// Threshold table sorted emergent-first, then by ascending `eta`.
pub fn render_threshold_summary(rows: &[ThresholdRow], format: TableFormat) -> String {
    let mut sorted: Vec<&ThresholdRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        b.emergent
            .cmp(&a.emergent)
            .then(a.eta.total_cmp(&b.eta))
            .then(a.dataset.cmp(&b.dataset))
    });
    let none_emergent = !rows.iter().any(|r| r.emergent);
    let mut out = String::new();
    match format {
        TableFormat::Markdown => {
            out.push_str("| Dataset | Emergent | η | η CI | N* |\n");
            out.push_str("|---|:---:|---:|:---:|---:|\n");
            for r in sorted {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} |",
                    md_cell(&r.dataset),
                    if r.emergent { "yes" } else { "no" },
                    fmt_sig4(r.eta),
                    interval_md(r.eta_ci, fmt_sig4),
                    size_cell(r.model_size)
                );
            }
            if none_emergent {
                out.push_str("\nno emergent abilities detected\n");
            }
        }
        TableFormat::Csv => {
            out.push_str("dataset,emergent,eta,eta_lo,eta_hi,model_size\n");
            for r in sorted {
                let [lo, hi] = interval_csv(r.eta_ci, fmt_sig4);
                let size = match r.model_size {
                    None => String::new(),
                    s => size_cell(s),
                };
                let _ = writeln!(
                    out,
                    "{},{},{},{lo},{hi},{size}",
                    csv_field(&r.dataset),
                    r.emergent,
                    fmt_sig4(r.eta)
                );
            }
            if none_emergent {
                out.push_str("# no emergent abilities detected\n");
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub loss: f64,
    pub value: f64,
    pub run_id: String,
}

/// Performance-vs-loss scatter for one dataset, points in training order
/// (descending loss).
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSeries {
    pub dataset: String,
    pub points: Vec<CurvePoint>,
    pub baseline: f64,
    /// Sampled model curve `(loss, value)` in metric units.
    pub overlay: Option<Vec<(f64, f64)>>,
}

impl CurveSeries {
    pub fn new(
        dataset: impl Into<String>,
        mut points: Vec<CurvePoint>,
        baseline: f64,
        overlay: Option<Vec<(f64, f64)>>,
    ) -> Self {
        points.sort_by(|a, b| b.loss.total_cmp(&a.loss));
        CurveSeries {
            dataset: dataset.into(),
            points,
            baseline,
            overlay,
        }
    }

    /// Series of `dataset` over every checkpoint that reports it.
    pub fn from_checkpoints(
        dataset: &str,
        checkpoints: &[CheckpointPoint],
        baseline: f64,
        overlay: Option<Vec<(f64, f64)>>,
    ) -> Self {
        let points = checkpoints
            .iter()
            .filter_map(|p| {
                p.metric(dataset).map(|value| CurvePoint {
                    loss: p.loss,
                    value,
                    run_id: p.run_id.clone(),
                })
            })
            .collect();
        CurveSeries::new(dataset, points, baseline, overlay)
    }
}

/// The fitted piecewise model sampled at `samples` losses across the fit's
/// range, mapped back to metric units.
pub fn sample_overlay(fit: &EmergenceFit, kind: MetricKind, samples: usize) -> Vec<(f64, f64)> {
    let (lo, hi) = fit.loss_range;
    let n = samples.max(2);
    let mut losses: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    if lo < fit.eta && fit.eta < hi {
        losses.push(fit.eta);
        losses.sort_by(f64::total_cmp);
    }
    losses
        .into_iter()
        .map(|l| {
            (
                l,
                denormalize_value(kind, normalized_performance_model(l, fit), fit.r),
            )
        })
        .collect()
}

pub fn render_curve_csv(series: &CurveSeries) -> String {
    let mut out = String::from("loss,value,run_id\n");
    for p in &series.points {
        let _ = writeln!(out, "{},{},{}", p.loss, p.value, csv_field(&p.run_id));
    }
    out
}

/// Parses the output of [`render_curve_csv`].
pub fn read_curve_csv(text: &str) -> Result<Vec<CurvePoint>, String> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    if headers.iter().collect::<Vec<_>>() != ["loss", "value", "run_id"] {
        return Err("expected header loss,value,run_id".into());
    }
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            let num = |i: usize| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| format!("{}: {e}", &rec[i]))
            };
            Ok(CurvePoint {
                loss: num(0)?,
                value: num(1)?,
                run_id: rec[2].to_string(),
            })
        })
        .collect()
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = hi - lo;
    let pad = if span > 0.0 {
        0.05 * span
    } else {
        0.5_f64.max(lo.abs() * 0.05)
    };
    (lo - pad, hi + pad)
}

fn tick_label(x: f64) -> String {
    crate::fmt_trimmed(x, 3)
}

/// Standalone SVG scatter: loss on x (ascending), metric on y, one color per
/// run, dashed baseline and optional model polyline.
pub fn render_curve_svg(series: &CurveSeries) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const LEFT: f64 = 64.0;
    const RIGHT: f64 = 130.0;
    const TOP: f64 = 36.0;
    const BOTTOM: f64 = 52.0;

    let overlay = series.overlay.as_deref().unwrap_or(&[]);
    let xs = series
        .points
        .iter()
        .map(|p| p.loss)
        .chain(overlay.iter().map(|o| o.0));
    let ys = series
        .points
        .iter()
        .map(|p| p.value)
        .chain(overlay.iter().map(|o| o.1))
        .chain(std::iter::once(series.baseline));
    let (x_lo, x_hi) = xs
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    let (y_lo, y_hi) = ys
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    let (x_lo, x_hi) = if x_lo.is_finite() {
        padded(x_lo, x_hi)
    } else {
        (0.0, 1.0)
    };
    let (y_lo, y_hi) = padded(y_lo.min(0.0), y_hi);

    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |y: f64| TOP + (y_hi - y) / (y_hi - y_lo) * plot_h;

    let runs: BTreeSet<&str> = series.points.iter().map(|p| p.run_id.as_str()).collect();
    let color =
        |run: &str| PALETTE[runs.iter().position(|r| *r == run).unwrap_or(0) % PALETTE.len()];

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + plot_w / 2.0,
        xml_escape(&series.dataset)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = x_lo + t * (x_hi - x_lo);
        let yv = y_lo + t * (y_hi - y_lo);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            px(xv),
            TOP + plot_h + 16.0,
            tick_label(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            py(yv) + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">pre-training loss</text>"#,
        LEFT + plot_w / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">performance</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    let _ = writeln!(
        s,
        r#"<line class="baseline" x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-dasharray="6,4"/>"#,
        py(series.baseline),
        LEFT + plot_w,
        py(series.baseline)
    );
    for p in &series.points {
        if p.loss.is_finite() && p.value.is_finite() {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"/>"#,
                px(p.loss),
                py(p.value),
                color(&p.run_id)
            );
        }
    }
    if !overlay.is_empty() {
        let pts: Vec<String> = overlay
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="fit" points="{}" fill="none" stroke="black" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
    }
    for (i, run) in runs.iter().enumerate() {
        let y = TOP + 10.0 + 16.0 * i as f64;
        let x = W - RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<circle cx="{x}" cy="{y}" r="4" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            color(run),
            x + 8.0,
            y + 4.0,
            xml_escape(run)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// File stem for a dataset name: anything outside `[A-Za-z0-9._-]` becomes `_`.
pub fn sanitize_file_stem(name: &str) -> String {
    let stem: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if stem.is_empty() || stem.chars().all(|c| c == '.') {
        format!("_{stem}")
    } else {
        stem
    }
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Writes `<dataset>.curve.csv` and `<dataset>.curve.svg` per series and
/// returns the paths in order. Nothing is written if any two datasets map to
/// the same file stem.
pub fn export_curves(series: &[CurveSeries], out_dir: &Path) -> io::Result<Vec<PathBuf>> {
    let stems: Vec<String> = series
        .iter()
        .map(|s| sanitize_file_stem(&s.dataset))
        .collect();
    let mut seen = BTreeSet::new();
    for (stem, s) in stems.iter().zip(series) {
        if !seen.insert(stem.to_lowercase()) {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!(
                    "dataset '{}' collides with another on file name '{stem}'",
                    s.dataset
                ),
            ));
        }
    }
    let rendered: Vec<(PathBuf, String)> = series
        .par_iter()
        .zip(stems.par_iter())
        .flat_map_iter(|(s, stem)| {
            [
                (
                    out_dir.join(format!("{stem}.curve.csv")),
                    render_curve_csv(s),
                ),
                (
                    out_dir.join(format!("{stem}.curve.svg")),
                    render_curve_svg(s),
                ),
            ]
        })
        .collect();
    fs::create_dir_all(out_dir)?;
    for (path, text) in &rendered {
        write_atomic(path, text.as_bytes())?;
    }
    Ok(rendered.into_iter().map(|(p, _)| p).collect())
}

//! Loss-threshold ("emergence") detection on normalized performance.
//!
//! The piecewise model is flat at the random-guess level (0 after
//! normalization) for losses at or above a threshold `eta` and improves below
//! it:
//!
//! ```text
//! hinge_linear       f(L) = a (eta - L)                 for L < eta
//! hinge_exponential  f(L) = a (1 - exp(-b (eta - L)))   for L < eta
//! ```
//!
//! Both are continuous at `eta`. The threshold is chosen by grid search; the
//! improvement parameters are closed-form (or a 1-D search for the rate `b`)
//! at every candidate. A task is called emergent when the piecewise model
//! beats a smooth monotone null model by a BIC margin.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scaling::{loss_threshold_to_model_size, ScalingError, ScalingFit};
use crate::stream_rng;

/// Minimum number of points required on each side of a candidate threshold.
pub const MIN_POINTS_PER_SIDE: usize = 3;
pub const MIN_POINTS_PIECEWISE: usize = 8;
pub const MIN_POINTS_SMOOTH: usize = 4;
pub const DEFAULT_RESOLUTION: f64 = 0.005;
pub const DEFAULT_BIC_MARGIN: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum EmergenceError {
    #[error("need at least {needed} points, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error(
        "insufficient coverage: no threshold leaves {MIN_POINTS_PER_SIDE} points on each side"
    )]
    InsufficientCoverage,
    #[error("non-finite point ({0}, {1})")]
    NonFinite(f64, f64),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    HingeLinear,
    HingeExponential,
}

impl Family {
    /// Free parameters counted by the BIC, threshold included.
    pub fn n_params(self) -> usize {
        match self {
            Family::HingeLinear => 2,
            Family::HingeExponential => 3,
        }
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hinge_linear" => Ok(Family::HingeLinear),
            "hinge_exponential" => Ok(Family::HingeExponential),
            _ => Err(format!("unknown family '{s}'")),
        }
    }
}

/// Parameters of the improvement function below the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImprovementParams {
    HingeExponential { scale: f64, rate: f64 },
    HingeLinear { slope: f64 },
}

impl ImprovementParams {
    pub fn family(&self) -> Family {
        match self {
            ImprovementParams::HingeLinear { .. } => Family::HingeLinear,
            ImprovementParams::HingeExponential { .. } => Family::HingeExponential,
        }
    }

    /// `f` evaluated at distance `depth = eta - L > 0` below the threshold, uncapped.
    fn improvement(&self, depth: f64) -> f64 {
        match *self {
            ImprovementParams::HingeLinear { slope } => slope * depth,
            ImprovementParams::HingeExponential { scale, rate } => {
                scale * -(-rate * depth).exp_m1()
            }
        }
    }

    fn is_improving(&self) -> bool {
        match *self {
            ImprovementParams::HingeLinear { slope } => slope > 0.0,
            ImprovementParams::HingeExponential { scale, rate } => scale > 0.0 && rate > 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseModel {
    pub eta: f64,
    pub params: ImprovementParams,
}

impl PiecewiseModel {
    /// Normalized performance at `loss`: 0 at or above the threshold, capped at 1.
    pub fn eval(&self, loss: f64) -> f64 {
        if loss >= self.eta {
            0.0
        } else {
            self.params.improvement(self.eta - loss).min(1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiecewiseFit {
    pub model: PiecewiseModel,
    pub sse: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothKind {
    #[default]
    Linear,
    Logistic,
}

impl std::str::FromStr for SmoothKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(SmoothKind::Linear),
            "logistic" => Ok(SmoothKind::Logistic),
            _ => Err(format!("unknown smooth model '{s}'")),
        }
    }
}

/// Null model that improves from the very first point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothModel {
    /// `intercept + slope * L` with `slope <= 0`.
    Linear { intercept: f64, slope: f64 },
    /// `1 / (1 + exp(steepness * (L - midpoint)))` with `steepness > 0`.
    Logistic { midpoint: f64, steepness: f64 },
}

impl SmoothModel {
    /// Raw model value; residuals are measured against this.
    pub fn eval(&self, loss: f64) -> f64 {
        match *self {
            SmoothModel::Linear { intercept, slope } => intercept + slope * loss,
            SmoothModel::Logistic {
                midpoint,
                steepness,
            } => 1.0 / (1.0 + (steepness * (loss - midpoint)).exp()),
        }
    }

    /// Value for plotting, clamped to `[0, 1]`.
    pub fn predict(&self, loss: f64) -> f64 {
        self.eval(loss).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothFit {
    pub model: SmoothModel,
    pub sse: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmergenceOptions {
    pub family: Family,
    /// Spacing of the threshold grid, in nats.
    pub resolution: f64,
    pub smooth: SmoothKind,
    pub bic_margin: f64,
    /// Random-guess level in the original metric units, recorded on the fit.
    pub baseline: f64,
    /// `(replicas, confidence, seed)` for a bootstrap interval on `eta`.
    pub bootstrap: Option<(usize, f64, u64)>,
}

impl Default for EmergenceOptions {
    fn default() -> Self {
        EmergenceOptions {
            family: Family::HingeLinear,
            resolution: DEFAULT_RESOLUTION,
            smooth: SmoothKind::Linear,
            bic_margin: DEFAULT_BIC_MARGIN,
            baseline: 0.0,
            bootstrap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmergenceFit {
    pub eta: f64,
    pub family: Family,
    pub f_params: ImprovementParams,
    /// Random-guess level of the underlying metric.
    pub r: f64,
    pub sse_piecewise: f64,
    pub sse_smooth: f64,
    pub bic_piecewise: f64,
    pub bic_smooth: f64,
    pub emergent: bool,
    pub eta_ci: Option<(f64, f64)>,
    pub smooth_model: SmoothModel,
    pub n_points: usize,
    pub loss_range: (f64, f64),
}

impl EmergenceFit {
    pub fn model(&self) -> PiecewiseModel {
        PiecewiseModel {
            eta: self.eta,
            params: self.f_params,
        }
    }
}

/// Normalized performance predicted by the piecewise side of `fit`.
pub fn normalized_performance_model(loss: f64, fit: &EmergenceFit) -> f64 {
    fit.model().eval(loss)
}

fn check_points(points: &[(f64, f64)], needed: usize) -> Result<(), EmergenceError> {
    if points.len() < needed {
        return Err(EmergenceError::TooFew {
            needed,
            got: points.len(),
        });
    }
    if let Some(&(l, y)) = points
        .iter()
        .find(|(l, y)| !l.is_finite() || !y.is_finite())
    {
        return Err(EmergenceError::NonFinite(l, y));
    }
    Ok(())
}

fn loss_bounds(points: &[(f64, f64)]) -> (f64, f64) {
    points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(l, _)| {
            (lo.min(l), hi.max(l))
        })
}

/// Threshold candidates `min L + k * resolution` strictly inside the loss range
/// that leave enough points on both sides.
pub fn threshold_grid(points: &[(f64, f64)], resolution: f64) -> Vec<f64> {
    let (lo, hi) = loss_bounds(points);
    let mut losses: Vec<f64> = points.iter().map(|p| p.0).collect();
    losses.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut k = 1u64;
    loop {
        let eta = lo + k as f64 * resolution;
        if eta >= hi {
            break;
        }
        let below = losses.partition_point(|&l| l < eta);
        if below >= MIN_POINTS_PER_SIDE && losses.len() - below >= MIN_POINTS_PER_SIDE {
            out.push(eta);
        }
        k += 1;
    }
    out
}

/// Best slope `a >= 0` for `y ~ a * x` and its residual sum of squares.
fn fit_scale(points: &[(f64, f64)], x_of: impl Fn(f64) -> f64, cap: Option<f64>) -> (f64, f64) {
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(l, y) in points {
        let x = x_of(l);
        sxy += x * y;
        sxx += x * x;
    }
    let mut a = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
    if let Some(c) = cap {
        a = a.min(c);
    }
    let sse = points
        .iter()
        .map(|&(l, y)| {
            let r = y - a * x_of(l);
            r * r
        })
        .sum();
    (a, sse)
}

fn golden_min(mut a: f64, mut b: f64, tol: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Coarse log-grid scan followed by golden-section refinement of `f(exp(u))`.
fn log_search(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    const CELLS: usize = 40;
    let (ulo, uhi) = (lo.ln(), hi.ln());
    let step = (uhi - ulo) / CELLS as f64;
    let (best_k, best_val) = (0..=CELLS)
        .map(|k| (k, f((ulo + k as f64 * step).exp())))
        .fold(
            (0, f64::INFINITY),
            |acc, (k, v)| if v < acc.1 { (k, v) } else { acc },
        );
    let a = ulo + best_k.saturating_sub(1) as f64 * step;
    let b = ulo + (best_k + 1).min(CELLS) as f64 * step;
    let (u, v) = golden_min(a, b, 1e-7, |u| f(u.exp()));
    if v <= best_val {
        (u.exp(), v)
    } else {
        ((ulo + best_k as f64 * step).exp(), best_val)
    }
}

fn fit_at_threshold(
    points: &[(f64, f64)],
    eta: f64,
    family: Family,
    span: f64,
) -> (ImprovementParams, f64) {
    let depth = |l: f64| (eta - l).max(0.0);
    match family {
        Family::HingeLinear => {
            let (slope, sse) = fit_scale(points, depth, None);
            (ImprovementParams::HingeLinear { slope }, sse)
        }
        Family::HingeExponential => {
            let sse_for =
                |rate: f64| fit_scale(points, |l| -(-rate * depth(l)).exp_m1(), Some(1.0));
            let (rate, _) = log_search(0.01 / span, 1000.0 / span, |b| sse_for(b).1);
            let (scale, sse) = sse_for(rate);
            (ImprovementParams::HingeExponential { scale, rate }, sse)
        }
    }
}

/// Least-squares piecewise fit over the threshold grid.
///
/// `points` are `(loss, normalized performance)` pairs. Points at or above a
/// candidate threshold are fitted by the constant 0.
pub fn fit_piecewise(
    points: &[(f64, f64)],
    family: Family,
    resolution: f64,
) -> Result<PiecewiseFit, EmergenceError> {
    check_points(points, MIN_POINTS_PIECEWISE)?;
    if !(resolution > 0.0) {
        return Err(EmergenceError::Invalid(format!(
            "grid resolution must be positive, got {resolution}"
        )));
    }
    let grid = threshold_grid(points, resolution);
    if grid.is_empty() {
        return Err(EmergenceError::InsufficientCoverage);
    }
    let (lo, hi) = loss_bounds(points);
    let span = hi - lo;
    let mut best: Option<(f64, ImprovementParams, f64)> = None;
    for eta in grid {
        let (params, sse) = fit_at_threshold(points, eta, family, span);
        if best.is_none_or(|(_, _, b)| sse < b) {
            best = Some((eta, params, sse));
        }
    }
    let (eta, params, sse) = best.expect("nonempty grid");
    Ok(PiecewiseFit {
        model: PiecewiseModel { eta, params },
        sse,
        n_points: points.len(),
    })
}

/// SSE of the piecewise family with the threshold pinned at `eta`.
pub fn piecewise_sse_at(points: &[(f64, f64)], eta: f64, family: Family) -> f64 {
    let (lo, hi) = loss_bounds(points);
    fit_at_threshold(points, eta, family, hi - lo).1
}

fn sse_of(points: &[(f64, f64)], model: &SmoothModel) -> f64 {
    points
        .iter()
        .map(|&(l, y)| {
            let r = y - model.eval(l);
            r * r
        })
        .sum()
}

/// Least-squares fit of a null model that is non-increasing in loss over all points.
pub fn fit_smooth(points: &[(f64, f64)], kind: SmoothKind) -> Result<SmoothFit, EmergenceError> {
    check_points(points, MIN_POINTS_SMOOTH)?;
    let n = points.len() as f64;
    let model = match kind {
        SmoothKind::Linear => {
            let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
            let my = points.iter().map(|p| p.1).sum::<f64>() / n;
            let (mut sxy, mut sxx) = (0.0, 0.0);
            for &(x, y) in points {
                sxy += (x - mx) * (y - my);
                sxx += (x - mx) * (x - mx);
            }
            let slope = if sxx > 0.0 { (sxy / sxx).min(0.0) } else { 0.0 };
            SmoothModel::Linear {
                intercept: my - slope * mx,
                slope,
            }
        }
        SmoothKind::Logistic => {
            let (lo, hi) = loss_bounds(points);
            let span = (hi - lo).max(f64::MIN_POSITIVE);
            let fit_mid = |midpoint: f64| {
                log_search(0.1 / span, 1000.0 / span, |steepness| {
                    sse_of(
                        points,
                        &SmoothModel::Logistic {
                            midpoint,
                            steepness,
                        },
                    )
                })
            };
            let cells = 100;
            let cell = 3.0 * span / cells as f64;
            let (mut mid, (mut steep, best)) = (0..=cells)
                .map(|k| lo - span + cell * k as f64)
                .map(|m| (m, fit_mid(m)))
                .fold(None, |acc: Option<(f64, (f64, f64))>, cur| match acc {
                    Some(a) if a.1 .1 <= cur.1 .1 => Some(a),
                    _ => Some(cur),
                })
                .expect("nonempty midpoint grid");
            let (m, v) = golden_min(mid - cell, mid + cell, 1e-9 * span, |m| fit_mid(m).1);
            if v < best {
                mid = m;
                steep = fit_mid(m).0;
            }
            SmoothModel::Logistic {
                midpoint: mid,
                steepness: steep,
            }
        }
    };
    Ok(SmoothFit {
        sse: sse_of(points, &model),
        model,
        n_points: points.len(),
    })
}

/// `n ln(sse / n) + k ln n`, with the SSE floored so exact fits stay finite.
pub fn bic(sse: f64, n: usize, k: usize) -> f64 {
    let n_f = n as f64;
    n_f * (sse.max(1e-300) / n_f).ln() + k as f64 * n_f.ln()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Percentile bootstrap interval of the fitted threshold over paired resamples.
///
/// Resamples without an admissible threshold are skipped; `None` when more than
/// half are skipped.
pub fn bootstrap_eta(
    points: &[(f64, f64)],
    family: Family,
    resolution: f64,
    replicas: usize,
    confidence: f64,
    seed: u64,
) -> Option<(f64, f64)> {
    let n = points.len();
    let etas: Vec<Option<f64>> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let sample: Vec<(f64, f64)> = (0..n).map(|_| points[rng.gen_range(0..n)]).collect();
            fit_piecewise(&sample, family, resolution)
                .ok()
                .map(|f| f.model.eta)
        })
        .collect();
    let mut etas: Vec<f64> = etas.into_iter().flatten().collect();
    if etas.is_empty() || etas.len() * 2 < replicas {
        return None;
    }
    etas.sort_by(f64::total_cmp);
    let alpha = (1.0 - confidence) / 2.0;
    Some((percentile(&etas, alpha), percentile(&etas, 1.0 - alpha)))
}

/// Fits both models and decides whether the data show a loss threshold.
pub fn detect_emergence(
    points: &[(f64, f64)],
    options: &EmergenceOptions,
) -> Result<EmergenceFit, EmergenceError> {
    let pw = fit_piecewise(points, options.family, options.resolution)?;
    let sm = fit_smooth(points, options.smooth)?;
    let n = points.len();
    let bic_piecewise = bic(pw.sse, n, options.family.n_params());
    let bic_smooth = bic(sm.sse, n, 2);
    let loss_range = loss_bounds(points);
    let interior = loss_range.0 < pw.model.eta && pw.model.eta < loss_range.1;
    let emergent = pw.model.params.is_improving()
        && interior
        && bic_piecewise < bic_smooth - options.bic_margin;
    let eta_ci = options.bootstrap.and_then(|(replicas, confidence, seed)| {
        bootstrap_eta(
            points,
            options.family,
            options.resolution,
            replicas,
            confidence,
            seed,
        )
        .map(|(lo, hi)| (lo.min(pw.model.eta), hi.max(pw.model.eta)))
    });
    Ok(EmergenceFit {
        eta: pw.model.eta,
        family: options.family,
        f_params: pw.model.params,
        r: options.baseline,
        sse_piecewise: pw.sse,
        sse_smooth: sm.sse,
        bic_piecewise,
        bic_smooth,
        emergent,
        eta_ci,
        smooth_model: sm.model,
        n_points: n,
        loss_range,
    })
}

/// Model size implied by a loss threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeThreshold {
    Reachable(f64),
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub dataset: String,
    pub emergent: bool,
    pub eta: f64,
    pub eta_ci: Option<(f64, f64)>,
    /// Present for emergent rows when a scaling fit was supplied.
    pub model_size: Option<SizeThreshold>,
}

/// One row per fit; emergent rows get the implied model-size threshold when
/// `scaling` is given.
pub fn threshold_report(
    fits: &[(String, EmergenceFit)],
    scaling: Option<&ScalingFit>,
) -> Result<Vec<ThresholdRow>, EmergenceError> {
    if fits.is_empty() {
        return Err(EmergenceError::Invalid("no fits to report".into()));
    }
    Ok(fits
        .iter()
        .map(|(dataset, fit)| ThresholdRow {
            dataset: dataset.clone(),
            emergent: fit.emergent,
            eta: fit.eta,
            eta_ci: fit.eta_ci,
            model_size: match (fit.emergent, scaling) {
                (true, Some(s)) => Some(match loss_threshold_to_model_size(s, fit.eta) {
                    Ok(n) => SizeThreshold::Reachable(n),
                    Err(ScalingError::Unreachable { .. }) => SizeThreshold::Unreachable,
                    Err(_) => SizeThreshold::Unreachable,
                }),
                _ => None,
            },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_fit(eta: f64, slope: f64) -> EmergenceFit {
        EmergenceFit {
            eta,
            family: Family::HingeLinear,
            f_params: ImprovementParams::HingeLinear { slope },
            r: 0.25,
            sse_piecewise: 0.0,
            sse_smooth: 0.0,
            bic_piecewise: 0.0,
            bic_smooth: 0.0,
            emergent: true,
            eta_ci: None,
            smooth_model: SmoothModel::Linear {
                intercept: 0.0,
                slope: 0.0,
            },
            n_points: 0,
            loss_range: (1.0, 3.0),
        }
    }

    fn hinge_points(n: usize, eta: f64, slope: f64) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let l = 1.6 + 1.4 * i as f64 / (n - 1) as f64;
                (l, slope * (eta - l).max(0.0))
            })
            .collect()
    }

    #[test]
    fn model_values() {
        let f = linear_fit(2.2, 2.0);
        assert_eq!(normalized_performance_model(2.2, &f), 0.0);
        assert_eq!(normalized_performance_model(2.7, &f), 0.0);
        assert!((normalized_performance_model(2.0, &f) - 0.4).abs() < 1e-12);
        assert_eq!(normalized_performance_model(0.0, &f), 1.0);
    }

    #[test]
    fn grid_respects_coverage() {
        let pts = hinge_points(10, 2.2, 1.0);
        let grid = threshold_grid(&pts, 0.01);
        let losses: Vec<f64> = pts.iter().map(|p| p.0).collect();
        for eta in &grid {
            let below = losses.iter().filter(|&&l| l < *eta).count();
            assert!(below >= 3 && losses.len() - below >= 3);
        }
        assert!(!grid.is_empty());
    }

    #[test]
    fn noiseless_hinge_recovered() {
        let pts = hinge_points(40, 2.2, 1.5);
        let fit = fit_piecewise(&pts, Family::HingeLinear, 0.005).unwrap();
        assert!((fit.model.eta - 2.2).abs() <= 0.005, "{fit:?}");
        let ImprovementParams::HingeLinear { slope } = fit.model.params else {
            panic!()
        };
        assert!((slope - 1.5).abs() < 1e-9, "{slope}");
        assert!(fit.sse < 1e-20);
    }

    #[test]
    fn exponential_family_recovers_threshold() {
        let model = PiecewiseModel {
            eta: 2.3,
            params: ImprovementParams::HingeExponential {
                scale: 0.8,
                rate: 3.0,
            },
        };
        let pts: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let l = 1.6 + 1.4 * i as f64 / 39.0;
                (l, model.eval(l))
            })
            .collect();
        let fit = fit_piecewise(&pts, Family::HingeExponential, 0.005).unwrap();
        assert!((fit.model.eta - 2.3).abs() <= 0.005, "{fit:?}");
        let ImprovementParams::HingeExponential { scale, rate } = fit.model.params else {
            panic!()
        };
        assert!(
            (scale - 0.8).abs() < 0.05 && (rate - 3.0).abs() < 0.5,
            "{scale} {rate}"
        );
    }

    #[test]
    fn too_few_and_uncovered() {
        let pts = hinge_points(7, 2.2, 1.0);
        assert_eq!(
            fit_piecewise(&pts, Family::HingeLinear, 0.005),
            Err(EmergenceError::TooFew { needed: 8, got: 7 })
        );
        let mut clumped = vec![(2.0, 0.1); 6];
        clumped.extend([(3.0, 0.0), (3.0, 0.0)]);
        assert_eq!(
            fit_piecewise(&clumped, Family::HingeLinear, 0.005),
            Err(EmergenceError::InsufficientCoverage)
        );
    }

    #[test]
    fn all_zero_is_not_emergent() {
        let pts: Vec<(f64, f64)> = (0..20).map(|i| (1.6 + i as f64 * 0.07, 0.0)).collect();
        let fit = detect_emergence(&pts, &EmergenceOptions::default()).unwrap();
        assert!(!fit.emergent);
    }

    #[test]
    fn smooth_fits() {
        let lin: Vec<(f64, f64)> = (0..10)
            .map(|i| (2.0 + 0.1 * i as f64, 0.9 - 0.3 * i as f64 * 0.1))
            .collect();
        let f = fit_smooth(&lin, SmoothKind::Linear).unwrap();
        assert!(f.sse < 1e-25);

        let flat: Vec<(f64, f64)> = (0..10).map(|i| (2.0 + 0.1 * i as f64, 0.3)).collect();
        let f = fit_smooth(&flat, SmoothKind::Linear).unwrap();
        let SmoothModel::Linear { intercept, slope } = f.model else {
            panic!()
        };
        assert!((intercept - 0.3).abs() < 1e-12 && slope.abs() < 1e-12);

        let hinge = hinge_points(40, 2.2, 1.5);
        let sm = fit_smooth(&hinge, SmoothKind::Linear).unwrap();
        let pw = fit_piecewise(&hinge, Family::HingeLinear, 0.005).unwrap();
        assert!(sm.sse > pw.sse);
        assert!(fit_smooth(&hinge[..3], SmoothKind::Linear).is_err());
    }

    #[test]
    fn logistic_null_fits_sigmoid() {
        let truth = SmoothModel::Logistic {
            midpoint: 2.4,
            steepness: 4.0,
        };
        let pts: Vec<(f64, f64)> = (0..30)
            .map(|i| {
                let l = 1.8 + 0.04 * i as f64;
                (l, truth.eval(l))
            })
            .collect();
        let f = fit_smooth(&pts, SmoothKind::Logistic).unwrap();
        assert!(f.sse < 1e-4, "{f:?}");
    }

    #[test]
    fn emergent_and_smooth_decisions() {
        let hinge = hinge_points(40, 2.2, 1.5);
        let fit = detect_emergence(&hinge, &EmergenceOptions::default()).unwrap();
        assert!(fit.emergent);
        assert!(fit.bic_piecewise < fit.bic_smooth - 2.0);

        let line: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let l = 1.6 + 1.4 * i as f64 / 39.0;
                (l, 0.5 * (3.4 - l))
            })
            .collect();
        let fit = detect_emergence(&line, &EmergenceOptions::default()).unwrap();
        assert!(!fit.emergent);
    }

    #[test]
    fn bootstrap_interval_contains_estimate() {
        let pts: Vec<(f64, f64)> = hinge_points(40, 2.2, 1.5)
            .into_iter()
            .enumerate()
            .map(|(i, (l, y))| (l, y + 0.01 * ((i * 7919) as f64).sin()))
            .collect();
        let opts = EmergenceOptions {
            bootstrap: Some((200, 0.9, 3)),
            ..Default::default()
        };
        let a = detect_emergence(&pts, &opts).unwrap();
        let (lo, hi) = a.eta_ci.unwrap();
        assert!(lo <= a.eta && a.eta <= hi);
        let b = detect_emergence(&pts, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn threshold_rows() {
        let scaling = ScalingFit {
            l_inf: 1.5,
            n0: 1e9,
            alpha: 0.3,
            sse: 0.0,
            n_points: 5,
        };
        let mut smooth = linear_fit(2.6, 0.5);
        smooth.emergent = false;
        let fits = vec![
            ("A".to_string(), linear_fit(2.2, 1.0)),
            ("B".to_string(), smooth),
            ("C".to_string(), linear_fit(1.4, 1.0)),
        ];
        let rows = threshold_report(&fits, Some(&scaling)).unwrap();
        let Some(SizeThreshold::Reachable(n)) = rows[0].model_size else {
            panic!("{rows:?}")
        };
        assert!((n / 3.2834e9 - 1.0).abs() < 1e-4);
        assert_eq!(rows[1].model_size, None);
        assert_eq!(rows[2].model_size, Some(SizeThreshold::Unreachable));
        assert!(threshold_report(&[], None).is_err());
    }

    #[test]
    fn fit_json_round_trip() {
        let f = linear_fit(2.2, 1.25);
        let json = serde_json::to_string(&f).unwrap();
        assert!(json.contains("\"f_params\":{\"slope\":1.25}"));
        let back: EmergenceFit = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f);
    }
}

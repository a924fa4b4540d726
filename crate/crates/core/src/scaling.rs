//! Loss scaling law `L(N) = L_inf + (N0 / N)^alpha` at a fixed token budget.
//!
//! Fitting profiles out the two power-law parameters: for a candidate
//! irreducible loss `c`, `ln(L - c)` is linear in `ln N`, so slope and
//! intercept come from ordinary least squares. Only `c` is searched, first on
//! a coarse grid and then by golden-section refinement around the best cell.
//! The objective is the sum of squared residuals in loss space.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::CheckpointPoint;

#[derive(Debug, Error, PartialEq)]
pub enum ScalingError {
    #[error("need at least 4 points with distinct model sizes, got {0}")]
    TooFew(usize),
    #[error("model size must be positive and finite, got {0}")]
    BadSize(f64),
    #[error("loss must be positive and finite, got {0}")]
    BadLoss(f64),
    #[error("data inconsistent with decreasing power law")]
    NotDecreasing,
    #[error("threshold {eta} is unreachable: it is at or below the irreducible loss {l_inf}")]
    Unreachable { eta: f64, l_inf: f64 },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    #[serde(rename = "L_inf")]
    pub l_inf: f64,
    #[serde(rename = "N0")]
    pub n0: f64,
    pub alpha: f64,
    pub sse: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingOptions {
    /// Width at which the golden-section search on `L_inf` stops.
    pub tolerance: f64,
    /// Number of coarse grid cells over `[0, min L)` before refinement.
    pub grid_cells: usize,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        ScalingOptions {
            tolerance: 1e-9,
            grid_cells: 400,
        }
    }
}

/// `L_inf + (N0 / N)^alpha`.
pub fn eval_scaling_law(fit: &ScalingFit, n: f64) -> Result<f64, ScalingError> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(ScalingError::BadSize(n));
    }
    Ok(fit.l_inf + (fit.n0 / n).powf(fit.alpha))
}

/// Model size at which the fitted law reaches loss `eta`: `N0 (eta - L_inf)^(-1/alpha)`.
pub fn loss_threshold_to_model_size(fit: &ScalingFit, eta: f64) -> Result<f64, ScalingError> {
    if !eta.is_finite() {
        return Err(ScalingError::Invalid(format!(
            "threshold {eta} is not finite"
        )));
    }
    if eta <= fit.l_inf {
        return Err(ScalingError::Unreachable {
            eta,
            l_inf: fit.l_inf,
        });
    }
    Ok(fit.n0 * (eta - fit.l_inf).powf(-1.0 / fit.alpha))
}

#[derive(Debug, Clone, Copy)]
struct Profile {
    sse: f64,
    /// `alpha * ln N0`
    intercept: f64,
    alpha: f64,
}

/// Inner closed-form step: regress `ln(L - c)` on `ln N`.
fn profile(log_n: &[f64], loss: &[f64], c: f64) -> Option<Profile> {
    let n = log_n.len() as f64;
    let ys: Vec<f64> = loss.iter().map(|l| (l - c).ln()).collect();
    if ys.iter().any(|y| !y.is_finite()) {
        return None;
    }
    let mx = log_n.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in log_n.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let slope = sxy / sxx;
    let alpha = -slope;
    if !(alpha > 0.0) {
        return None;
    }
    let intercept = my - slope * mx;
    let sse = log_n
        .iter()
        .zip(loss)
        .map(|(x, l)| {
            let r = l - c - (intercept - alpha * x).exp();
            r * r
        })
        .sum();
    Some(Profile {
        sse,
        intercept,
        alpha,
    })
}

fn sse_at(log_n: &[f64], loss: &[f64], c: f64) -> f64 {
    profile(log_n, loss, c).map_or(f64::INFINITY, |p| p.sse)
}

/// Golden-section minimization of `f` on `[a, b]`; returns the best abscissa seen.
fn golden_section(mut a: f64, mut b: f64, tol: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > tol {
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

/// Fits the scaling law to `(N, L)` pairs measured at one token budget.
pub fn fit_scaling_law(
    points: &[(f64, f64)],
    options: &ScalingOptions,
) -> Result<ScalingFit, ScalingError> {
    for &(n, l) in points {
        if !(n > 0.0) || !n.is_finite() {
            return Err(ScalingError::BadSize(n));
        }
        if !(l > 0.0) || !l.is_finite() {
            return Err(ScalingError::BadLoss(l));
        }
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut distinct = sorted.iter().map(|p| p.0).collect::<Vec<_>>();
    distinct.dedup();
    if sorted.len() < 4 || distinct.len() < 4 {
        return Err(ScalingError::TooFew(distinct.len()));
    }

    let log_n: Vec<f64> = sorted.iter().map(|p| p.0.ln()).collect();
    let loss: Vec<f64> = sorted.iter().map(|p| p.1).collect();
    let min_loss = loss.iter().copied().fold(f64::INFINITY, f64::min);
    let upper = (1.0 - 1e-6) * min_loss;

    let cells = options.grid_cells.max(2);
    let step = upper / cells as f64;
    let grid: Vec<(f64, f64)> = (0..=cells)
        .map(|k| {
            let c = if k == cells { upper } else { k as f64 * step };
            (c, sse_at(&log_n, &loss, c))
        })
        .collect();
    let (best_k, &(mut best_c, mut best_sse)) = grid
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("nonempty grid");
    if !best_sse.is_finite() {
        return Err(ScalingError::NotDecreasing);
    }
    let lo = grid[best_k.saturating_sub(1)].0;
    let hi = grid[(best_k + 1).min(cells)].0;
    let (c, sse) = golden_section(lo, hi, options.tolerance, |c| sse_at(&log_n, &loss, c));
    if sse <= best_sse {
        best_c = c;
        best_sse = sse;
    }
    let p = profile(&log_n, &loss, best_c).ok_or(ScalingError::NotDecreasing)?;
    Ok(ScalingFit {
        l_inf: best_c,
        n0: (p.intercept / p.alpha).exp(),
        alpha: p.alpha,
        sse: best_sse,
        n_points: sorted.len(),
    })
}

/// `(N, L)` pairs of the checkpoints trained on exactly `tokens` tokens.
///
/// Without `tokens`, the largest budget reached by every run is used.
pub fn points_at_budget(
    points: &[CheckpointPoint],
    tokens: Option<f64>,
) -> Result<(f64, Vec<(f64, f64)>), ScalingError> {
    let budget = match tokens {
        Some(t) => t,
        None => {
            let mut runs: Vec<&str> = points.iter().map(|p| p.run_id.as_str()).collect();
            runs.sort_unstable();
            runs.dedup();
            let mut common: Option<Vec<f64>> = None;
            for run in runs {
                let mine: Vec<f64> = points
                    .iter()
                    .filter(|p| p.run_id == run)
                    .map(|p| p.tokens_trained)
                    .collect();
                common = Some(match common {
                    None => mine,
                    Some(c) => c.into_iter().filter(|t| mine.contains(t)).collect(),
                });
            }
            common
                .unwrap_or_default()
                .into_iter()
                .fold(None, |acc: Option<f64>, t| {
                    Some(acc.map_or(t, |a| a.max(t)))
                })
                .ok_or_else(|| {
                    ScalingError::Invalid("runs share no common token budget".to_string())
                })?
        }
    };
    let sel = points
        .iter()
        .filter(|p| (p.tokens_trained - budget).abs() <= 1e-9 * budget.abs())
        .map(|p| (p.model_params, p.loss))
        .collect();
    Ok((budget, sel))
}

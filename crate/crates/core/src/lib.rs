//! Analysis of how language-model pre-training loss relates to downstream task
//! performance.
//!
//! The crate covers the whole path from raw evaluation outcomes to threshold
//! summaries:
//!
//! * [`ingest`] reads manifests, checkpoint tables and per-example logs,
//! * [`metrics`] scores outcomes (accuracy, exact match, correct-choice
//!   probability, Brier score) and maps scores onto a normalized scale,
//! * [`stats`] correlates loss with performance,
//! * [`scaling`] fits `L(N) = L_inf + (N0/N)^alpha` and inverts it,
//! * [`emergence`] fits flat-then-improving models and decides whether a task
//!   shows a loss threshold,
//! * [`simulate`] generates synthetic fleets with known ground truth,
//! * [`report`] renders tables, CSV curves and SVG scatter plots,
//! * [`cli`] wires it all into the `losslens` binary.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod emergence;
pub mod ingest;
pub mod metrics;
pub mod report;
pub mod scaling;
pub mod simulate;
pub mod stats;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random stream `stream` under the master `seed`.
///
/// Work split across threads draws from per-item streams so results do not
/// depend on scheduling.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Formats `x` with at most `decimals` fractional digits, dropping trailing zeros.
pub(crate) fn fmt_trimmed(x: f64, decimals: usize) -> String {
    let s = format!("{x:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

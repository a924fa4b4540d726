//! Per-dataset scores computed from example outcomes.
//!
//! Multi-choice outcomes can be scored four ways: argmax accuracy, mean
//! probability of the correct option, and the Brier score with or without
//! division by the option count. Open-form outcomes are scored by exact match.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Answer, DatasetDescriptor, ExampleOutcome, TaskMetric};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no outcomes to score")]
    Empty,
    #[error("{metric} needs {expected} outcomes, found {found} (example '{example_id}')")]
    WrongForm {
        metric: MetricKind,
        expected: &'static str,
        found: &'static str,
        example_id: String,
    },
    #[error("per-option Brier score needs a constant option count, found {0} and {1}")]
    RaggedChoices(usize, usize),
    #[error("{0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    ExactMatch,
    CorrectChoiceProb,
    Brier,
    BrierPerOption,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::ExactMatch => "exact_match",
            MetricKind::CorrectChoiceProb => "correct_choice_prob",
            MetricKind::Brier => "brier",
            MetricKind::BrierPerOption => "brier_per_option",
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, MetricKind::Brier | MetricKind::BrierPerOption)
    }
}

impl From<TaskMetric> for MetricKind {
    fn from(m: TaskMetric) -> Self {
        match m {
            TaskMetric::Accuracy => MetricKind::Accuracy,
            TaskMetric::ExactMatch => MetricKind::ExactMatch,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "accuracy" => MetricKind::Accuracy,
            "exact_match" => MetricKind::ExactMatch,
            "correct_choice_prob" => MetricKind::CorrectChoiceProb,
            "brier" => MetricKind::Brier,
            "brier_per_option" => MetricKind::BrierPerOption,
            _ => return Err(format!("unknown metric kind '{s}'")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub value: f64,
    pub n_examples: usize,
    pub higher_is_better: bool,
}

impl MetricValue {
    pub fn new(kind: MetricKind, value: f64, n_examples: usize) -> Self {
        MetricValue {
            kind,
            value,
            n_examples,
            higher_is_better: kind.higher_is_better(),
        }
    }
}

fn multi_choice(
    outcomes: &[ExampleOutcome],
    metric: MetricKind,
) -> Result<Vec<(&[f64], usize)>, MetricError> {
    if outcomes.is_empty() {
        return Err(MetricError::Empty);
    }
    outcomes
        .iter()
        .map(|o| match &o.answer {
            Answer::MultiChoice {
                choice_probs,
                correct_index,
            } => Ok((choice_probs.as_slice(), *correct_index)),
            Answer::OpenForm { .. } => Err(MetricError::WrongForm {
                metric,
                expected: "multi-choice",
                found: "open-form",
                example_id: o.example_id.clone(),
            }),
        })
        .collect()
}

/// Index of the largest probability; ties resolve to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Fraction of examples whose maximum probability is shared by two or more options.
pub fn argmax_tie_fraction(outcomes: &[ExampleOutcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    let ties = outcomes
        .iter()
        .filter(|o| match &o.answer {
            Answer::MultiChoice { choice_probs, .. } => {
                let max = choice_probs[argmax(choice_probs)];
                choice_probs.iter().filter(|&&p| p == max).count() > 1
            }
            Answer::OpenForm { .. } => false,
        })
        .count();
    ties as f64 / outcomes.len() as f64
}

/// Argmax accuracy with lowest-index tie-breaking.
///
/// A uniform prediction therefore counts as correct exactly when the correct
/// option is the first one.
pub fn accuracy(outcomes: &[ExampleOutcome]) -> Result<MetricValue, MetricError> {
    let mc = multi_choice(outcomes, MetricKind::Accuracy)?;
    let hits = mc.iter().filter(|(p, c)| argmax(p) == *c).count();
    Ok(MetricValue::new(
        MetricKind::Accuracy,
        hits as f64 / mc.len() as f64,
        mc.len(),
    ))
}

fn number_token() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+(?:,\d{3})*(?:\.\d+)?").expect("static regex"))
}

/// Final answer of a prediction.
///
/// With `cot`, the text after the last `####` marker, or failing that the last
/// number in the text; the whole text when neither exists.
pub fn extract_answer(text: &str, cot: bool) -> &str {
    if !cot {
        return text;
    }
    if let Some(pos) = text.rfind("####") {
        return &text[pos + 4..];
    }
    number_token()
        .find_iter(text)
        .last()
        .map(|m| m.as_str())
        .unwrap_or(text)
}

fn is_terminal_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '。' | '！' | '？' | '，' | '、' | '；' | '：' | '…')
}

/// Lowercase, trim, strip trailing punctuation, drop the articles a/an/the and
/// collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let stripped = lower.trim().trim_end_matches(is_terminal_punct);
    stripped
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn is_exact_match(predicted: &str, gold: &[String], cot: bool) -> bool {
    let pred = normalize_answer(extract_answer(predicted, cot));
    gold.iter().any(|g| normalize_answer(g) == pred)
}

pub fn exact_match(outcomes: &[ExampleOutcome], cot: bool) -> Result<MetricValue, MetricError> {
    if outcomes.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut hits = 0usize;
    for o in outcomes {
        match &o.answer {
            Answer::OpenForm {
                predicted_text,
                gold_texts,
            } => {
                if is_exact_match(predicted_text, gold_texts, cot) {
                    hits += 1;
                }
            }
            Answer::MultiChoice { .. } => {
                return Err(MetricError::WrongForm {
                    metric: MetricKind::ExactMatch,
                    expected: "open-form",
                    found: "multi-choice",
                    example_id: o.example_id.clone(),
                })
            }
        }
    }
    Ok(MetricValue::new(
        MetricKind::ExactMatch,
        hits as f64 / outcomes.len() as f64,
        outcomes.len(),
    ))
}

/// Mean probability assigned to the correct option.
pub fn correct_choice_prob(outcomes: &[ExampleOutcome]) -> Result<MetricValue, MetricError> {
    let mc = multi_choice(outcomes, MetricKind::CorrectChoiceProb)?;
    let total: f64 = mc.iter().map(|(p, c)| p[*c]).sum();
    Ok(MetricValue::new(
        MetricKind::CorrectChoiceProb,
        total / mc.len() as f64,
        mc.len(),
    ))
}

/// Mean squared distance between predicted probabilities and the one-hot label.
///
/// With `per_option_normalized`, each example's sum is divided by the option
/// count, which must then be the same for every example.
pub fn brier_score(
    outcomes: &[ExampleOutcome],
    per_option_normalized: bool,
) -> Result<MetricValue, MetricError> {
    let kind = if per_option_normalized {
        MetricKind::BrierPerOption
    } else {
        MetricKind::Brier
    };
    let mc = multi_choice(outcomes, kind)?;
    if per_option_normalized {
        let c0 = mc[0].0.len();
        if let Some((p, _)) = mc.iter().find(|(p, _)| p.len() != c0) {
            return Err(MetricError::RaggedChoices(c0, p.len()));
        }
    }
    let total: f64 = mc
        .iter()
        .map(|(probs, correct)| {
            let sq: f64 = probs
                .iter()
                .enumerate()
                .map(|(j, &p)| {
                    let y = if j == *correct { 1.0 } else { 0.0 };
                    (y - p) * (y - p)
                })
                .sum();
            if per_option_normalized {
                sq / probs.len() as f64
            } else {
                sq
            }
        })
        .sum();
    Ok(MetricValue::new(kind, total / mc.len() as f64, mc.len()))
}

/// Brier score of the uniform predictor when correct options are uniformly distributed:
/// `1 - 1/C`, or `(C - 1)/C^2` per option.
pub fn brier_random_baseline(
    num_choices: u32,
    per_option_normalized: bool,
) -> Result<f64, MetricError> {
    if num_choices < 2 {
        return Err(MetricError::Domain(format!(
            "num_choices must be ≥ 2, got {num_choices}"
        )));
    }
    let c = f64::from(num_choices);
    Ok(if per_option_normalized {
        (c - 1.0) / (c * c)
    } else {
        1.0 - 1.0 / c
    })
}

/// Random-guess level of `kind` on `descriptor`.
pub fn random_baseline(
    descriptor: &DatasetDescriptor,
    kind: MetricKind,
) -> Result<f64, MetricError> {
    let choices = || {
        descriptor.num_choices().ok_or_else(|| {
            MetricError::Domain(format!(
                "{kind} is undefined for open-form dataset '{}'",
                descriptor.name()
            ))
        })
    };
    match kind {
        MetricKind::Accuracy | MetricKind::ExactMatch => Ok(descriptor.random_baseline()),
        MetricKind::CorrectChoiceProb => Ok(1.0 / f64::from(choices()?)),
        MetricKind::Brier => brier_random_baseline(choices()?, false),
        MetricKind::BrierPerOption => brier_random_baseline(choices()?, true),
    }
}

/// Rescales a score so the random-guess level `r` maps to 0 and a perfect score to 1.
///
/// Values worse than random come out negative; the result is capped at 1.
pub fn normalized_score(value: &MetricValue, r: f64) -> Result<f64, MetricError> {
    normalize_value(value.kind, value.value, r)
}

pub fn normalize_value(kind: MetricKind, value: f64, r: f64) -> Result<f64, MetricError> {
    let score = if kind.higher_is_better() {
        if r >= 1.0 {
            return Err(MetricError::Domain(format!(
                "baseline {r} leaves no room above random for {kind}"
            )));
        }
        (value - r) / (1.0 - r)
    } else {
        if r <= 0.0 {
            return Err(MetricError::Domain(format!(
                "baseline {r} leaves no room below random for {kind}"
            )));
        }
        (r - value) / r
    };
    Ok(score.min(1.0))
}

/// Inverse of [`normalize_value`] for values at or below the cap.
pub fn denormalize_value(kind: MetricKind, normalized: f64, r: f64) -> f64 {
    if kind.higher_is_better() {
        r + (1.0 - r) * normalized
    } else {
        r - r * normalized
    }
}

/// Probability implied by a conditional cross-entropy: `exp(-loss)`.
pub fn loss_to_prob(conditional_loss: f64) -> Result<f64, MetricError> {
    if !(conditional_loss >= 0.0) {
        return Err(MetricError::Domain(format!(
            "conditional loss must be ≥ 0, got {conditional_loss}"
        )));
    }
    Ok((-conditional_loss).exp())
}

/// Scores `outcomes` with `kind`, using the descriptor for the CoT extraction rule.
pub fn score(
    outcomes: &[ExampleOutcome],
    kind: MetricKind,
    descriptor: &DatasetDescriptor,
) -> Result<MetricValue, MetricError> {
    match kind {
        MetricKind::Accuracy => accuracy(outcomes),
        MetricKind::ExactMatch => exact_match(outcomes, descriptor.is_cot()),
        MetricKind::CorrectChoiceProb => correct_choice_prob(outcomes),
        MetricKind::Brier => brier_score(outcomes, false),
        MetricKind::BrierPerOption => brier_score(outcomes, true),
    }
}

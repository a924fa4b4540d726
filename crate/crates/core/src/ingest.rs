//! Run metadata, checkpoint records, evaluation logs and dataset manifests.
//!
//! Three line-oriented formats are understood:
//!
//! * `manifest.csv` with header `name,task_type,prompting,answer_form,num_choices,metric`
//!   and an optional trailing `num_examples` column,
//! * `runs.csv` with header `run_id,model_params,tokens_trained,loss` followed by one
//!   column per dataset (empty cells mean "not evaluated"),
//! * evaluation logs as JSON lines, one object per example.
//!
//! Every parse error carries the 1-based line number of the offending record.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmt_trimmed;

/// Tolerance on the sum of a choice-probability vector.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{}: {cause}", path.display())]
    Io { path: PathBuf, cause: io::Error },
    #[error("line {line}: {message}")]
    Record { line: u64, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl IngestError {
    fn at(line: u64, message: impl Into<String>) -> Self {
        IngestError::Record {
            line,
            message: message.into(),
        }
    }

    /// Line number of the offending record, when the error is tied to one.
    pub fn line(&self) -> Option<u64> {
        match self {
            IngestError::Record { line, .. } => Some(*line),
            _ => None,
        }
    }
}

macro_rules! keyword_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim() {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        "unknown {} '{}' (expected one of: {})",
                        stringify!($name),
                        other,
                        [$($text),+].join(", ")
                    )),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

keyword_enum!(TaskType {
    ClosedBookQa => "closed_book_qa",
    CommonsenseNli => "commonsense_nli",
    ReadingComprehension => "reading_comprehension",
    Coreference => "coreference",
    Examination => "examination",
    MathWordProblem => "math_word_problem",
    Other => "other",
});

keyword_enum!(Prompting {
    ZeroShot => "zero_shot",
    FewShot => "few_shot",
    FewShotCot => "few_shot_cot",
});

keyword_enum!(AnswerForm {
    MultiChoice => "multi_choice",
    OpenForm => "open_form",
});

keyword_enum!(
    /// Headline metric a dataset is scored with.
    TaskMetric {
        Accuracy => "accuracy",
        ExactMatch => "exact_match",
    }
);

/// One evaluated task.
///
/// Multi-choice tasks carry an option count `C >= 2` and a random-guess level of `1/C`;
/// open-form tasks have no option count and a random-guess level of 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DescriptorRecord", into = "DescriptorRecord")]
pub struct DatasetDescriptor {
    name: String,
    task_type: TaskType,
    prompting: Prompting,
    answer_form: AnswerForm,
    metric: TaskMetric,
    num_choices: Option<u32>,
    num_examples: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DescriptorRecord {
    name: String,
    task_type: TaskType,
    prompting: Prompting,
    answer_form: AnswerForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_choices: Option<u32>,
    metric: TaskMetric,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_examples: Option<u64>,
}

impl TryFrom<DescriptorRecord> for DatasetDescriptor {
    type Error = String;

    fn try_from(r: DescriptorRecord) -> Result<Self, Self::Error> {
        DatasetDescriptor::new(
            r.name,
            r.task_type,
            r.prompting,
            r.answer_form,
            r.num_choices,
            r.metric,
        )
        .map(|d| d.with_num_examples(r.num_examples))
    }
}

impl From<DatasetDescriptor> for DescriptorRecord {
    fn from(d: DatasetDescriptor) -> Self {
        DescriptorRecord {
            name: d.name,
            task_type: d.task_type,
            prompting: d.prompting,
            answer_form: d.answer_form,
            num_choices: d.num_choices,
            metric: d.metric,
            num_examples: d.num_examples,
        }
    }
}

impl DatasetDescriptor {
    pub fn new(
        name: impl Into<String>,
        task_type: TaskType,
        prompting: Prompting,
        answer_form: AnswerForm,
        num_choices: Option<u32>,
        metric: TaskMetric,
    ) -> Result<Self, String> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err("dataset name must not be empty".into());
        }
        if name.trim() != name {
            return Err(format!("dataset name '{name}' has surrounding whitespace"));
        }
        match (answer_form, num_choices) {
            (AnswerForm::MultiChoice, None) => {
                return Err("multi_choice dataset requires num_choices".into())
            }
            (AnswerForm::MultiChoice, Some(c)) if c < 2 => {
                return Err("num_choices must be ≥ 2".into())
            }
            (AnswerForm::OpenForm, Some(_)) => {
                return Err("open_form dataset must not set num_choices".into())
            }
            _ => {}
        }
        match (answer_form, metric) {
            (AnswerForm::MultiChoice, TaskMetric::ExactMatch) => {
                return Err("metric exact_match requires answer_form open_form".into())
            }
            (AnswerForm::OpenForm, TaskMetric::Accuracy) => {
                return Err("metric accuracy requires answer_form multi_choice".into())
            }
            _ => {}
        }
        Ok(DatasetDescriptor {
            name,
            task_type,
            prompting,
            answer_form,
            metric,
            num_choices,
            num_examples: None,
        })
    }

    /// Attaches the benchmark size, used for binomial standard errors.
    pub fn with_num_examples(mut self, n: Option<u64>) -> Self {
        self.num_examples = n.filter(|&n| n > 0);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn task_type(&self) -> TaskType {
        self.task_type
    }

    pub fn prompting(&self) -> Prompting {
        self.prompting
    }

    pub fn answer_form(&self) -> AnswerForm {
        self.answer_form
    }

    pub fn metric(&self) -> TaskMetric {
        self.metric
    }

    pub fn num_choices(&self) -> Option<u32> {
        self.num_choices
    }

    pub fn num_examples(&self) -> Option<u64> {
        self.num_examples
    }

    pub fn is_cot(&self) -> bool {
        self.prompting == Prompting::FewShotCot
    }

    /// Expected headline metric of a context-free guesser.
    pub fn random_baseline(&self) -> f64 {
        match self.num_choices {
            Some(c) => 1.0 / f64::from(c),
            None => 0.0,
        }
    }
}

/// Payload of one scored example.
#[derive(Debug, Clone, PartialEq)]
pub enum Answer {
    MultiChoice {
        choice_probs: Vec<f64>,
        correct_index: usize,
    },
    OpenForm {
        predicted_text: String,
        gold_texts: Vec<String>,
    },
}

/// One model prediction on one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleOutcome {
    pub example_id: String,
    pub answer: Answer,
}

impl ExampleOutcome {
    pub fn multi_choice(
        example_id: impl Into<String>,
        choice_probs: Vec<f64>,
        correct_index: usize,
    ) -> Result<Self, String> {
        if choice_probs.len() < 2 {
            return Err(format!(
                "choice_probs needs at least 2 entries, got {}",
                choice_probs.len()
            ));
        }
        if let Some(p) = choice_probs
            .iter()
            .find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(format!("probability {p} outside [0, 1]"));
        }
        let sum: f64 = choice_probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(format!("probabilities sum {}", fmt_trimmed(sum, 9)));
        }
        if correct_index >= choice_probs.len() {
            return Err(format!(
                "correct_index {correct_index} out of range for {} choices",
                choice_probs.len()
            ));
        }
        Ok(ExampleOutcome {
            example_id: example_id.into(),
            answer: Answer::MultiChoice {
                choice_probs,
                correct_index,
            },
        })
    }

    pub fn open_form(
        example_id: impl Into<String>,
        predicted_text: impl Into<String>,
        gold_texts: Vec<String>,
    ) -> Result<Self, String> {
        if gold_texts.is_empty() {
            return Err("gold_texts must be a nonempty list".into());
        }
        Ok(ExampleOutcome {
            example_id: example_id.into(),
            answer: Answer::OpenForm {
                predicted_text: predicted_text.into(),
                gold_texts,
            },
        })
    }

    pub fn answer_form(&self) -> AnswerForm {
        match self.answer {
            Answer::MultiChoice { .. } => AnswerForm::MultiChoice,
            Answer::OpenForm { .. } => AnswerForm::OpenForm,
        }
    }
}

/// One `(run, checkpoint)` observation.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointPoint {
    pub run_id: String,
    /// Parameter count N.
    pub model_params: f64,
    /// Tokens seen so far, D.
    pub tokens_trained: f64,
    /// Pre-training loss in nats/token.
    pub loss: f64,
    pub metrics: BTreeMap<String, f64>,
}

impl CheckpointPoint {
    pub fn metric(&self, dataset: &str) -> Option<f64> {
        self.metrics.get(dataset).copied()
    }
}

fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|cause| IngestError::Io {
            path: path.to_path_buf(),
            cause,
        })
}

fn csv_reader<R: Read>(rdr: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(rdr)
}

fn csv_error(e: csv::Error) -> IngestError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    IngestError::at(line, e.to_string())
}

const MANIFEST_HEADER: [&str; 6] = [
    "name",
    "task_type",
    "prompting",
    "answer_form",
    "num_choices",
    "metric",
];

pub fn parse_manifest(path: &Path) -> Result<Vec<DatasetDescriptor>, IngestError> {
    read_manifest(open(path)?)
}

pub fn read_manifest<R: Read>(rdr: R) -> Result<Vec<DatasetDescriptor>, IngestError> {
    let mut rdr = csv_reader(rdr);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let has_examples = match cols.as_slice() {
        c if c == MANIFEST_HEADER => false,
        [head @ .., "num_examples"] if head == MANIFEST_HEADER => true,
        _ => return Err(IngestError::at(
            1,
            format!(
                "manifest header must be '{}' (optionally followed by ',num_examples'), got '{}'",
                MANIFEST_HEADER.join(","),
                cols.join(",")
            ),
        )),
    };

    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != cols.len() {
            return Err(IngestError::at(
                line,
                format!("expected {} fields, found {}", cols.len(), rec.len()),
            ));
        }
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |m: String| IngestError::at(line, m);
        let task_type = field(1).parse::<TaskType>().map_err(bad)?;
        let prompting = field(2).parse::<Prompting>().map_err(bad)?;
        let answer_form = field(3).parse::<AnswerForm>().map_err(bad)?;
        let num_choices = match field(4) {
            "" => None,
            s => Some(s.parse::<u32>().map_err(|_| {
                IngestError::at(line, format!("num_choices '{s}' is not a positive integer"))
            })?),
        };
        let metric = field(5).parse::<TaskMetric>().map_err(bad)?;
        let num_examples = if has_examples {
            match field(6) {
                "" => None,
                s => Some(s.parse::<u64>().map_err(|_| {
                    IngestError::at(
                        line,
                        format!("num_examples '{s}' is not a positive integer"),
                    )
                })?),
            }
        } else {
            None
        };
        let d = DatasetDescriptor::new(
            field(0),
            task_type,
            prompting,
            answer_form,
            num_choices,
            metric,
        )
        .map_err(|m| IngestError::at(line, m))?
        .with_num_examples(num_examples);
        if !seen.insert(d.name.clone()) {
            return Err(IngestError::at(
                line,
                format!("duplicate dataset name '{}'", d.name),
            ));
        }
        out.push(d);
    }
    Ok(out)
}

pub fn write_manifest(manifest: &[DatasetDescriptor]) -> String {
    let with_examples = manifest.iter().any(|d| d.num_examples.is_some());
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header: Vec<&str> = MANIFEST_HEADER.to_vec();
    if with_examples {
        header.push("num_examples");
    }
    w.write_record(&header).expect("in-memory write");
    for d in manifest {
        let mut row = vec![
            d.name.clone(),
            d.task_type.to_string(),
            d.prompting.to_string(),
            d.answer_form.to_string(),
            d.num_choices.map(|c| c.to_string()).unwrap_or_default(),
            d.metric.to_string(),
        ];
        if with_examples {
            row.push(d.num_examples.map(|n| n.to_string()).unwrap_or_default());
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub const RUNS_FIXED_COLUMNS: [&str; 4] = ["run_id", "model_params", "tokens_trained", "loss"];

pub fn parse_runs(
    path: &Path,
    manifest: &[DatasetDescriptor],
) -> Result<Vec<CheckpointPoint>, IngestError> {
    read_runs(open(path)?, manifest)
}

/// Reads checkpoint rows, sorted by `(run_id, tokens_trained)` on return.
pub fn read_runs<R: Read>(
    rdr: R,
    manifest: &[DatasetDescriptor],
) -> Result<Vec<CheckpointPoint>, IngestError> {
    let mut rdr = csv_reader(rdr);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let cols: Vec<String> = header.iter().map(str::to_string).collect();
    if cols.len() < 4 || cols[..4] != RUNS_FIXED_COLUMNS {
        return Err(IngestError::at(
            1,
            format!(
                "runs header must start with '{}', got '{}'",
                RUNS_FIXED_COLUMNS.join(","),
                cols.join(",")
            ),
        ));
    }
    let known: HashSet<&str> = manifest.iter().map(|d| d.name()).collect();
    let mut seen_cols = HashSet::new();
    for c in &cols[4..] {
        if !known.contains(c.as_str()) {
            return Err(IngestError::at(
                1,
                format!("column '{c}' is not a dataset in the manifest"),
            ));
        }
        if !seen_cols.insert(c.as_str()) {
            return Err(IngestError::at(1, format!("duplicate column '{c}'")));
        }
    }

    let mut points: Vec<(u64, CheckpointPoint)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != cols.len() {
            return Err(IngestError::at(
                line,
                format!("expected {} fields, found {}", cols.len(), rec.len()),
            ));
        }
        let number = |i: usize| -> Result<f64, IngestError> {
            let raw = rec.get(i).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    IngestError::at(line, format!("{}: '{raw}' is not a finite number", cols[i]))
                })
        };
        let run_id = rec.get(0).unwrap_or("").to_string();
        if run_id.is_empty() {
            return Err(IngestError::at(line, "run_id must not be empty"));
        }
        let model_params = number(1)?;
        let tokens_trained = number(2)?;
        let loss = number(3)?;
        if model_params < 1.0 {
            return Err(IngestError::at(
                line,
                format!("model_params {model_params} must be ≥ 1"),
            ));
        }
        if tokens_trained < 1.0 {
            return Err(IngestError::at(
                line,
                format!("tokens_trained {tokens_trained} must be ≥ 1"),
            ));
        }
        if loss <= 0.0 {
            return Err(IngestError::at(
                line,
                format!("loss {loss} must be positive"),
            ));
        }
        let mut metrics = BTreeMap::new();
        for (i, name) in cols.iter().enumerate().skip(4) {
            if rec.get(i).unwrap_or("").is_empty() {
                continue;
            }
            let v = number(i)?;
            if !(0.0..=2.0).contains(&v) {
                return Err(IngestError::at(
                    line,
                    format!("{name}: metric value {v} outside [0, 2]"),
                ));
            }
            metrics.insert(name.clone(), v);
        }
        points.push((
            line,
            CheckpointPoint {
                run_id,
                model_params,
                tokens_trained,
                loss,
                metrics,
            },
        ));
    }

    points.sort_by(|(_, a), (_, b)| {
        a.run_id
            .cmp(&b.run_id)
            .then(a.tokens_trained.total_cmp(&b.tokens_trained))
    });
    for pair in points.windows(2) {
        let ((_, a), (line, b)) = (&pair[0], &pair[1]);
        if a.run_id == b.run_id && a.tokens_trained == b.tokens_trained {
            return Err(IngestError::at(
                *line,
                format!(
                    "duplicate checkpoint (run_id '{}', tokens_trained {})",
                    b.run_id, b.tokens_trained
                ),
            ));
        }
    }
    Ok(points.into_iter().map(|(_, p)| p).collect())
}

/// Serializes checkpoints with one metric column per entry of `datasets`.
pub fn write_runs(points: &[CheckpointPoint], datasets: &[&str]) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header: Vec<&str> = RUNS_FIXED_COLUMNS.to_vec();
    header.extend_from_slice(datasets);
    w.write_record(&header).expect("in-memory write");
    for p in points {
        let mut row = vec![
            p.run_id.clone(),
            p.model_params.to_string(),
            p.tokens_trained.to_string(),
            p.loss.to_string(),
        ];
        for d in datasets {
            row.push(p.metric(d).map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

#[derive(Debug, Deserialize, Serialize)]
struct OutcomeRecord {
    example_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    choice_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    correct_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    predicted_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_texts: Option<Vec<String>>,
}

pub fn parse_eval_log(
    path: &Path,
    descriptor: &DatasetDescriptor,
) -> Result<Vec<ExampleOutcome>, IngestError> {
    read_eval_log(open(path)?, descriptor)
}

pub fn read_eval_log<R: Read>(
    rdr: R,
    descriptor: &DatasetDescriptor,
) -> Result<Vec<ExampleOutcome>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(rdr).lines().enumerate() {
        let lineno = i as u64 + 1;
        let line = line.map_err(|e| IngestError::at(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: OutcomeRecord = serde_json::from_str(&line)
            .map_err(|e| IngestError::at(lineno, format!("invalid JSON: {e}")))?;
        let id = rec
            .example_id
            .ok_or_else(|| IngestError::at(lineno, "missing example_id"))?;
        let outcome = match descriptor.answer_form() {
            AnswerForm::MultiChoice => {
                let probs = rec.choice_probs.ok_or_else(|| {
                    IngestError::at(lineno, "multi-choice record lacks choice_probs")
                })?;
                let idx = rec.correct_index.ok_or_else(|| {
                    IngestError::at(lineno, "multi-choice record lacks correct_index")
                })?;
                ExampleOutcome::multi_choice(id, probs, idx)
            }
            AnswerForm::OpenForm => {
                let gold = rec
                    .gold_texts
                    .ok_or_else(|| IngestError::at(lineno, "open-form record lacks gold_texts"))?;
                let pred = rec.predicted_text.ok_or_else(|| {
                    IngestError::at(lineno, "open-form record lacks predicted_text")
                })?;
                ExampleOutcome::open_form(id, pred, gold)
            }
        }
        .map_err(|m| IngestError::at(lineno, m))?;
        out.push(outcome);
    }
    if out.is_empty() {
        return Err(IngestError::Invalid(format!(
            "evaluation log for '{}' contains no records",
            descriptor.name()
        )));
    }
    Ok(out)
}

pub fn write_eval_log(outcomes: &[ExampleOutcome]) -> String {
    let mut s = String::new();
    for o in outcomes {
        let rec = match &o.answer {
            Answer::MultiChoice {
                choice_probs,
                correct_index,
            } => OutcomeRecord {
                example_id: Some(o.example_id.clone()),
                choice_probs: Some(choice_probs.clone()),
                correct_index: Some(*correct_index),
                predicted_text: None,
                gold_texts: None,
            },
            Answer::OpenForm {
                predicted_text,
                gold_texts,
            } => OutcomeRecord {
                example_id: Some(o.example_id.clone()),
                choice_probs: None,
                correct_index: None,
                predicted_text: Some(predicted_text.clone()),
                gold_texts: Some(gold_texts.clone()),
            },
        };
        s.push_str(&serde_json::to_string(&rec).expect("plain record"));
        s.push('\n');
    }
    s
}

/// Per-dataset summary inside a [`ValidationReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub name: String,
    pub n_points: usize,
    pub loss_range: Option<(f64, f64)>,
    pub metric_range: Option<(f64, f64)>,
    /// Fraction of points within the baseline band of the random-guess level.
    pub at_baseline_fraction: f64,
    /// Half-width of the baseline band: 3 binomial standard errors when the
    /// benchmark size is known, [`DEFAULT_BASELINE_BAND`] otherwise.
    pub baseline_band: f64,
    /// `(run_id, tokens_trained, value)` of points below baseline minus the band.
    pub suspicious: Vec<(String, f64, f64)>,
}

/// Baseline band used when the manifest does not record a benchmark size.
pub const DEFAULT_BASELINE_BAND: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub n_points: usize,
    pub datasets: Vec<DatasetSummary>,
    pub warnings: Vec<String>,
}

/// Three binomial standard errors around the random-guess level `r` for `n` examples.
pub fn binomial_band(r: f64, n: u64) -> f64 {
    3.0 * (r * (1.0 - r) / n as f64).sqrt()
}

/// Summarizes checkpoints against the manifest. Never fails; problems become warnings.
pub fn validate_dataset(
    points: &[CheckpointPoint],
    manifest: &[DatasetDescriptor],
) -> ValidationReport {
    let mut warnings = Vec::new();
    if points.is_empty() {
        warnings.push("no checkpoints to validate".to_string());
    }
    let datasets = manifest
        .iter()
        .map(|d| {
            let vals: Vec<(&CheckpointPoint, f64)> = points
                .iter()
                .filter_map(|p| p.metric(d.name()).map(|v| (p, v)))
                .collect();
            let range = |it: &mut dyn Iterator<Item = f64>| {
                it.fold(None, |acc: Option<(f64, f64)>, v| match acc {
                    None => Some((v, v)),
                    Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
                })
            };
            let loss_range = range(&mut vals.iter().map(|(p, _)| p.loss));
            let metric_range = range(&mut vals.iter().map(|(_, v)| *v));
            let r = d.random_baseline();
            let band = match d.num_examples() {
                Some(n) if r > 0.0 => binomial_band(r, n),
                _ => DEFAULT_BASELINE_BAND,
            };
            let at_baseline = vals.iter().filter(|(_, v)| (v - r).abs() <= band).count();
            let suspicious: Vec<_> = vals
                .iter()
                .filter(|(_, v)| *v < r - band)
                .map(|(p, v)| (p.run_id.clone(), p.tokens_trained, *v))
                .collect();
            if vals.is_empty() && !points.is_empty() {
                warnings.push(format!("{}: no metric values", d.name()));
            }
            if !suspicious.is_empty() {
                warnings.push(format!(
                    "{}: {} value(s) below random baseline {} by more than {}",
                    d.name(),
                    suspicious.len(),
                    fmt_trimmed(r, 4),
                    fmt_trimmed(band, 4)
                ));
            }
            DatasetSummary {
                name: d.name().to_string(),
                n_points: vals.len(),
                loss_range,
                metric_range,
                at_baseline_fraction: if vals.is_empty() {
                    0.0
                } else {
                    at_baseline as f64 / vals.len() as f64
                },
                baseline_band: band,
                suspicious,
            }
        })
        .collect();
    ValidationReport {
        n_points: points.len(),
        datasets,
        warnings,
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} points", self.n_points)?;
        for d in &self.datasets {
            write!(f, "{}: {} points", d.name, d.n_points)?;
            if let Some((lo, hi)) = d.loss_range {
                write!(f, ", loss [{lo:.4}, {hi:.4}]")?;
            }
            if let Some((lo, hi)) = d.metric_range {
                write!(f, ", metric [{lo:.4}, {hi:.4}]")?;
            }
            writeln!(f)?;
            writeln!(
                f,
                "{}: at-baseline fraction {:.2}",
                d.name, d.at_baseline_fraction
            )?;
            for (run, tokens, v) in &d.suspicious {
                writeln!(
                    f,
                    "{}: suspicious value {v} at run {run}, tokens {tokens}",
                    d.name
                )?;
            }
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

//! Synthetic training fleets with known ground truth.
//!
//! Loss follows `L(N, D) = E + A / N^alpha + B / D^beta` with multiplicative
//! Gaussian jitter. At a fixed token budget `D` this is exactly
//! `L_inf + (N0 / N)^alpha` with `L_inf = E + B / D^beta` and
//! `N0 = A^(1/alpha)`.
//!
//! Task performance at a checkpoint is `p = r + (1 - r) * g(L)` where `g` is
//! either a piecewise threshold model or a smooth linear ramp, observed through
//! binomial sampling over the benchmark size.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emergence::{Family, ImprovementParams, PiecewiseModel};
use crate::ingest::{
    AnswerForm, CheckpointPoint, DatasetDescriptor, ExampleOutcome, Prompting, TaskMetric, TaskType,
};
use crate::stream_rng;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
}

fn bad(msg: impl Into<String>) -> SimError {
    SimError::Config(msg.into())
}

/// Two-term loss surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSurface {
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "A")]
    pub a: f64,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub beta: f64,
}

impl LossSurface {
    pub fn loss(&self, params: f64, tokens: f64) -> f64 {
        self.e + self.a / params.powf(self.alpha) + self.b / tokens.powf(self.beta)
    }

    /// Irreducible loss of the model-size law at token budget `tokens`.
    pub fn l_inf_at(&self, tokens: f64) -> f64 {
        self.e + self.b / tokens.powf(self.beta)
    }

    /// Scale `N0` of the model-size law, independent of the token budget.
    pub fn n0(&self) -> f64 {
        self.a.powf(1.0 / self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub run_id: String,
    pub model_params: f64,
    pub final_tokens: f64,
    pub checkpoint_interval: f64,
}

impl RunSpec {
    /// Token counts `k * interval` for `k = 1..` up to the final budget.
    pub fn checkpoints(&self) -> Vec<f64> {
        let k_max = (self.final_tokens / self.checkpoint_interval + 1e-9).floor() as u64;
        (1..=k_max)
            .map(|k| k as f64 * self.checkpoint_interval)
            .collect()
    }
}

/// Normalized performance `clamp(slope * (zero_loss - L), 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothSpec {
    pub slope: f64,
    pub zero_loss: f64,
}

impl SmoothSpec {
    pub fn eval(&self, loss: f64) -> f64 {
        (self.slope * (self.zero_loss - loss)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TaskShape {
    Emergent(PiecewiseModel),
    Smooth(SmoothSpec),
}

impl TaskShape {
    pub fn normalized(&self, loss: f64) -> f64 {
        match self {
            TaskShape::Emergent(m) => m.eval(loss),
            TaskShape::Smooth(s) => s.eval(loss),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TaskRecord", into = "TaskRecord")]
pub struct TaskSpec {
    pub descriptor: DatasetDescriptor,
    pub n_examples: u64,
    pub shape: TaskShape,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TaskRecord {
    descriptor: DatasetDescriptor,
    n_examples: u64,
    emergent: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    family: Option<Family>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f_params: Option<ImprovementParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    smooth: Option<SmoothSpec>,
}

impl TryFrom<TaskRecord> for TaskSpec {
    type Error = String;

    fn try_from(t: TaskRecord) -> Result<Self, Self::Error> {
        let name = t.descriptor.name().to_string();
        if t.n_examples == 0 {
            return Err(format!("task '{name}': n_examples must be positive"));
        }
        let shape = if t.emergent {
            if t.smooth.is_some() {
                return Err(format!(
                    "task '{name}': emergent task must not carry 'smooth'"
                ));
            }
            let eta = t
                .eta
                .ok_or(format!("task '{name}': emergent task needs 'eta'"))?;
            let params = t
                .f_params
                .ok_or(format!("task '{name}': emergent task needs 'f_params'"))?;
            if let Some(f) = t.family {
                if f != params.family() {
                    return Err(format!("task '{name}': f_params do not match family"));
                }
            }
            let ok = match params {
                ImprovementParams::HingeLinear { slope } => slope > 0.0,
                ImprovementParams::HingeExponential { scale, rate } => {
                    scale > 0.0 && scale <= 1.0 && rate > 0.0
                }
            };
            if !ok || !eta.is_finite() {
                return Err(format!(
                    "task '{name}': improvement parameters out of range"
                ));
            }
            TaskShape::Emergent(PiecewiseModel { eta, params })
        } else {
            if t.eta.is_some() || t.f_params.is_some() {
                return Err(format!(
                    "task '{name}': smooth task carries a 'smooth' spec instead of eta/f_params"
                ));
            }
            let s = t
                .smooth
                .ok_or(format!("task '{name}': smooth task needs 'smooth'"))?;
            if !(s.slope > 0.0) || !s.zero_loss.is_finite() {
                return Err(format!("task '{name}': smooth slope must be positive"));
            }
            TaskShape::Smooth(s)
        };
        Ok(TaskSpec {
            descriptor: t.descriptor.with_num_examples(Some(t.n_examples)),
            n_examples: t.n_examples,
            shape,
        })
    }
}

impl From<TaskSpec> for TaskRecord {
    fn from(t: TaskSpec) -> Self {
        let (emergent, eta, family, f_params, smooth) = match t.shape {
            TaskShape::Emergent(m) => (
                true,
                Some(m.eta),
                Some(m.params.family()),
                Some(m.params),
                None,
            ),
            TaskShape::Smooth(s) => (false, None, None, None, Some(s)),
        };
        TaskRecord {
            descriptor: t.descriptor,
            n_examples: t.n_examples,
            emergent,
            eta,
            family,
            f_params,
            smooth,
        }
    }
}

impl TaskSpec {
    pub fn name(&self) -> &str {
        self.descriptor.name()
    }

    /// Expected headline metric at `loss`.
    pub fn expected_metric(&self, loss: f64) -> f64 {
        let r = self.descriptor.random_baseline();
        (r + (1.0 - r) * self.shape.normalized(loss)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default = "default_loss_sigma")]
    pub loss_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_loss_sigma() -> f64 {
    0.002
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            loss_sigma: default_loss_sigma(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scaling: LossSurface,
    pub fleet: Vec<RunSpec>,
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let s = &self.scaling;
        if [s.e, s.a, s.alpha, s.b, s.beta]
            .iter()
            .any(|v| !(*v > 0.0) || !v.is_finite())
        {
            return Err(bad("scaling constants must be positive and finite"));
        }
        if !(self.noise.loss_sigma >= 0.0) {
            return Err(bad("loss_sigma must be non-negative"));
        }
        if self.fleet.is_empty() {
            return Err(bad("fleet is empty"));
        }
        let mut ids: Vec<&str> = Vec::new();
        for run in &self.fleet {
            if !(run.checkpoint_interval > 0.0) {
                return Err(bad(format!(
                    "run '{}': checkpoint_interval must be positive",
                    run.run_id
                )));
            }
            if !(run.model_params >= 1.0) || run.final_tokens < run.checkpoint_interval {
                return Err(bad(format!(
                    "run '{}': needs model_params ≥ 1 and final_tokens ≥ checkpoint_interval",
                    run.run_id
                )));
            }
            if run.run_id.is_empty() || ids.contains(&run.run_id.as_str()) {
                return Err(bad(format!("run id '{}' is empty or repeated", run.run_id)));
            }
            ids.push(&run.run_id);
        }
        let mut names: Vec<&str> = Vec::new();
        for t in &self.tasks {
            if names.contains(&t.name()) {
                return Err(bad(format!("task '{}' is repeated", t.name())));
            }
            names.push(t.name());
        }
        Ok(())
    }

    pub fn manifest(&self) -> Vec<DatasetDescriptor> {
        self.tasks.iter().map(|t| t.descriptor.clone()).collect()
    }

    /// Three runs checkpointed every 43B tokens with twelve benchmark-sized tasks:
    /// four with a loss threshold at 2.2, the rest improving smoothly.
    pub fn reference_fleet() -> Self {
        use AnswerForm::*;
        use Prompting::*;
        use TaskType::*;
        let interval = 43e9;
        let run = |id: &str, n: f64, d: f64| RunSpec {
            run_id: id.into(),
            model_params: n,
            final_tokens: d,
            checkpoint_interval: interval,
        };
        let task = |name: &str, tt, pr, form, c: Option<u32>, n: u64, shape| {
            let metric = if form == MultiChoice {
                TaskMetric::Accuracy
            } else {
                TaskMetric::ExactMatch
            };
            TaskSpec {
                descriptor: DatasetDescriptor::new(name, tt, pr, form, c, metric)
                    .expect("static descriptor")
                    .with_num_examples(Some(n)),
                n_examples: n,
                shape,
            }
        };
        let emergent = |slope| {
            TaskShape::Emergent(PiecewiseModel {
                eta: 2.2,
                params: ImprovementParams::HingeLinear { slope },
            })
        };
        let smooth = |slope, zero_loss| TaskShape::Smooth(SmoothSpec { slope, zero_loss });
        SimConfig {
            scaling: LossSurface {
                e: 1.5,
                a: 406.4,
                alpha: 0.34,
                b: 948.0,
                beta: 0.28,
            },
            fleet: vec![
                run("1.5B", 1.5e9, 3e12),
                run("6B", 6e9, 3e12),
                run("32B", 32e9, 2.5e12),
            ],
            tasks: vec![
                task(
                    "TriviaQA",
                    ClosedBookQa,
                    FewShot,
                    OpenForm,
                    None,
                    11313,
                    smooth(0.55, 3.2),
                ),
                task(
                    "HellaSwag",
                    CommonsenseNli,
                    ZeroShot,
                    MultiChoice,
                    Some(4),
                    10042,
                    smooth(0.6, 3.1),
                ),
                task(
                    "RACE",
                    ReadingComprehension,
                    FewShot,
                    MultiChoice,
                    Some(4),
                    4934,
                    smooth(0.4, 3.3),
                ),
                task(
                    "WinoGrande",
                    Coreference,
                    ZeroShot,
                    MultiChoice,
                    Some(2),
                    1267,
                    smooth(0.5, 3.2),
                ),
                task(
                    "MMLU",
                    Examination,
                    FewShot,
                    MultiChoice,
                    Some(4),
                    14042,
                    emergent(1.2),
                ),
                task(
                    "GSM8K",
                    MathWordProblem,
                    FewShotCot,
                    OpenForm,
                    None,
                    1319,
                    emergent(0.8),
                ),
                task(
                    "NLPCC-KBQA",
                    ClosedBookQa,
                    FewShot,
                    OpenForm,
                    None,
                    10613,
                    smooth(0.5, 3.3),
                ),
                task(
                    "ClozeT",
                    CommonsenseNli,
                    ZeroShot,
                    MultiChoice,
                    Some(2),
                    938,
                    smooth(0.6, 3.1),
                ),
                task(
                    "CLUEWSC",
                    Coreference,
                    ZeroShot,
                    MultiChoice,
                    Some(2),
                    508,
                    smooth(0.5, 3.2),
                ),
                task(
                    "C3",
                    ReadingComprehension,
                    FewShot,
                    MultiChoice,
                    Some(4),
                    3816,
                    smooth(0.45, 3.3),
                ),
                task(
                    "C-Eval",
                    Examination,
                    FewShot,
                    MultiChoice,
                    Some(4),
                    1346,
                    emergent(1.0),
                ),
                task(
                    "GSM8K-Chinese",
                    MathWordProblem,
                    FewShotCot,
                    OpenForm,
                    None,
                    1212,
                    emergent(0.7),
                ),
            ],
            noise: NoiseSpec::default(),
        }
    }
}

/// FNV-1a over labelled parts; used to derive per-item random streams.
pub fn stream_id(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for b in part.bytes().chain(std::iter::once(0xff)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Loss-only checkpoints of one run.
pub fn gen_loss_curve(config: &SimConfig, run: &RunSpec, seed: u64) -> Vec<CheckpointPoint> {
    let mut rng = stream_rng(seed, stream_id(&["loss", &run.run_id]));
    let sigma = config.noise.loss_sigma;
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    run.checkpoints()
        .into_iter()
        .map(|tokens| {
            let clean = config.scaling.loss(run.model_params, tokens);
            let jitter = if sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            CheckpointPoint {
                run_id: run.run_id.clone(),
                model_params: run.model_params,
                tokens_trained: tokens,
                loss: clean * (1.0 + jitter),
                metrics: BTreeMap::new(),
            }
        })
        .collect()
}

/// Observed metric per checkpoint: `Binomial(n, p(L)) / n`.
pub fn gen_task_performance(points: &[CheckpointPoint], task: &TaskSpec, seed: u64) -> Vec<f64> {
    let run = points.first().map(|p| p.run_id.as_str()).unwrap_or("");
    let mut rng = stream_rng(seed, stream_id(&["performance", task.name(), run]));
    points
        .iter()
        .map(|pt| {
            let p = task.expected_metric(pt.loss);
            let k = Binomial::new(task.n_examples, p)
                .expect("p in [0, 1]")
                .sample(&mut rng);
            k as f64 / task.n_examples as f64
        })
        .collect()
}

/// Example-level outcomes whose expected argmax accuracy (or exact-match rate) is `p`.
///
/// A solved multi-choice example (probability `p`) puts mass above `1/C` on the
/// correct option and spreads the rest evenly. An unsolved one gives the
/// correct option and all but one wrong option `1/(2C)` each, leaving a single
/// decoy as the unique argmax. Ties at the top never occur.
pub fn gen_eval_log(task: &TaskSpec, p: f64, n: usize, seed: u64) -> Vec<ExampleOutcome> {
    let p = p.clamp(0.0, 1.0);
    let mut rng = stream_rng(seed, stream_id(&["eval", task.name()]));
    let name = task.name();
    match task.descriptor.num_choices() {
        Some(c) => {
            let c_f = f64::from(c);
            let q_hit = 1.0 / c_f + (1.0 - 1.0 / c_f) * (0.25 + 0.5 * p);
            let q_miss = 0.5 / c_f;
            (0..n)
                .map(|i| {
                    let c = c as usize;
                    let correct = rng.gen_range(0..c);
                    let probs = if rng.gen_bool(p) {
                        let rest = (1.0 - q_hit) / (c_f - 1.0);
                        (0..c)
                            .map(|j| if j == correct { q_hit } else { rest })
                            .collect()
                    } else {
                        let decoy = (correct + rng.gen_range(1..c)) % c;
                        let top = 1.0 - (c_f - 1.0) * q_miss;
                        (0..c)
                            .map(|j| if j == decoy { top } else { q_miss })
                            .collect()
                    };
                    ExampleOutcome::multi_choice(format!("{name}-{i:06}"), probs, correct)
                        .expect("generated probabilities are valid")
                })
                .collect()
        }
        None => {
            let cot = task.descriptor.is_cot();
            (0..n)
                .map(|i| {
                    let gold: u32 = rng.gen_range(1..=9999);
                    let said = if rng.gen_bool(p) { gold } else { gold + 1 };
                    let predicted = if cot {
                        let steps = ["First", "Then", "So"];
                        format!(
                            "{} we work it out. #### {said}",
                            steps.choose(&mut rng).unwrap()
                        )
                    } else {
                        said.to_string()
                    };
                    ExampleOutcome::open_form(
                        format!("{name}-{i:06}"),
                        predicted,
                        vec![gold.to_string()],
                    )
                    .expect("gold is nonempty")
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskTruth {
    pub dataset: String,
    pub emergent: bool,
    pub eta: Option<f64>,
    pub random_baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Simulation {
    #[serde(skip)]
    pub manifest: Vec<DatasetDescriptor>,
    #[serde(skip)]
    pub points: Vec<CheckpointPoint>,
    pub seed: u64,
    pub tasks: Vec<TaskTruth>,
    pub scaling: LossSurface,
}

/// Generates every run of the fleet with all task metrics filled in.
pub fn simulate(config: &SimConfig, seed: u64) -> Result<Simulation, SimError> {
    config.validate()?;
    let runs: Vec<Vec<CheckpointPoint>> = config
        .fleet
        .par_iter()
        .map(|run| {
            let mut pts = gen_loss_curve(config, run, seed);
            for task in &config.tasks {
                let vals = gen_task_performance(&pts, task, seed);
                for (pt, v) in pts.iter_mut().zip(vals) {
                    pt.metrics.insert(task.name().to_string(), v);
                }
            }
            pts
        })
        .collect();
    let mut points: Vec<CheckpointPoint> = runs.into_iter().flatten().collect();
    points.sort_by(|a, b| {
        a.run_id
            .cmp(&b.run_id)
            .then(a.tokens_trained.total_cmp(&b.tokens_trained))
    });
    Ok(Simulation {
        manifest: config.manifest(),
        points,
        seed,
        tasks: config
            .tasks
            .iter()
            .map(|t| TaskTruth {
                dataset: t.name().to_string(),
                emergent: matches!(t.shape, TaskShape::Emergent(_)),
                eta: match t.shape {
                    TaskShape::Emergent(m) => Some(m.eta),
                    TaskShape::Smooth(_) => None,
                },
                random_baseline: t.descriptor.random_baseline(),
            })
            .collect(),
        scaling: config.scaling,
    })
}

/// Evaluation log for one `(run, checkpoint, task)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalLog {
    pub run_id: String,
    pub tokens_trained: f64,
    pub dataset: String,
    pub outcomes: Vec<ExampleOutcome>,
}

/// Example-level logs for every checkpoint of `points`, `n` examples each,
/// drawn at the expected metric of the checkpoint's loss.
pub fn simulate_eval_logs(
    config: &SimConfig,
    points: &[CheckpointPoint],
    n: usize,
    seed: u64,
) -> Vec<EvalLog> {
    points
        .par_iter()
        .flat_map_iter(|pt| {
            config.tasks.iter().map(move |task| {
                let tokens = pt.tokens_trained.to_string();
                let sub_seed = seed ^ stream_id(&[&pt.run_id, &tokens]);
                EvalLog {
                    run_id: pt.run_id.clone(),
                    tokens_trained: pt.tokens_trained,
                    dataset: task.name().to_string(),
                    outcomes: gen_eval_log(task, task.expected_metric(pt.loss), n, sub_seed),
                }
            })
        })
        .collect()
}

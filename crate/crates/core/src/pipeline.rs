//! End-to-end runs: prepare data, search every component, roll the learned
//! system forward and score it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Mode, RunConfig};
use crate::dataset::{split_by_steps, train_test_split, Trajectory, TrajectoryDataset};
use crate::epi::generate_trajectories;
use crate::expr::{OperatorSequence, OperatorSet, TemplateKind};
use crate::forecast::{
    per_step_mse, per_step_mse_by_component, persistence_baseline, rollout, RolloutMode,
    VectorField,
};
use crate::io::{self, load_csv, normalize_series, ScaleRecord};
use crate::search::{
    assemble_system, derive_seed, search_all, EpochSummary, ScoreRecord, SearchError, SystemModel,
};

/// Seed-path tag for synthetic data generation, kept apart from the search
/// streams derived from the same run seed.
const DATA_STREAM: u64 = 0xDA7A;

/// Decimal places in the human-readable equations.
pub const SYMBOLIC_PRECISION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{stage} failed: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub kind: ErrorKind,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: &'static str, kind: ErrorKind, message: impl ToString) -> Self {
        Self {
            stage,
            kind,
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        Self::new("config", ErrorKind::Config, e)
    }
}

fn search_error(e: SearchError) -> PipelineError {
    let kind = match e {
        SearchError::Config { .. } => ErrorKind::Config,
        _ => ErrorKind::Numerical,
    };
    PipelineError::new("search", kind, e)
}

/// Training and evaluation data for a run, in fitting units.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: TrajectoryDataset,
    pub test: TrajectoryDataset,
    pub scale: ScaleRecord,
}

/// Synthetic mode: generate and split whole trajectories. Real mode: load,
/// normalize and split the single series at `train_days`.
pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData, PipelineError> {
    cfg.validate()?;
    let data_err = |e: &dyn std::fmt::Display| PipelineError::new("data", ErrorKind::Data, e);
    match cfg.mode {
        Mode::Synthetic => {
            let full = generate_dataset(cfg)?;
            let s = cfg.synthetic.as_ref().expect("validated");
            let (train, test) =
                train_test_split(&full, s.train_fraction).map_err(|e| data_err(&e))?;
            Ok(PreparedData {
                train,
                test,
                scale: ScaleRecord::identity(),
            })
        }
        Mode::Real => {
            let r = cfg.real.as_ref().expect("validated");
            let raw = load_csv(&r.input, &r.columns, r.dt).map_err(|e| data_err(&e))?;
            if raw.trajectories().len() != 1 {
                return Err(data_err(&"real mode expects a single dated series"));
            }
            let rows = raw.trajectories()[0].len();
            if rows <= r.train_days {
                return Err(data_err(&format!(
                    "series has {rows} rows, train_days = {} leaves nothing to forecast",
                    r.train_days
                )));
            }
            let (norm, scale) =
                normalize_series(&raw, r.normalization).map_err(|e| data_err(&e))?;
            let (train, test) = split_by_steps(&norm, r.train_days).map_err(|e| data_err(&e))?;
            Ok(PreparedData { train, test, scale })
        }
    }
}

/// The full synthetic dataset before splitting.
pub fn generate_dataset(cfg: &RunConfig) -> Result<TrajectoryDataset, PipelineError> {
    let s = cfg
        .synthetic
        .as_ref()
        .filter(|_| cfg.mode == Mode::Synthetic)
        .ok_or_else(|| {
            PipelineError::new(
                "config",
                ErrorKind::Config,
                "data generation needs synthetic mode",
            )
        })?;
    generate_trajectories(
        s.model,
        &s.params(),
        &s.generate_options(),
        derive_seed(cfg.seed, &[DATA_STREAM]),
    )
    .map_err(|e| PipelineError::new("generate", ErrorKind::Config, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentResult {
    pub component: usize,
    pub variable: String,
    pub template: TemplateKind,
    pub sequence: OperatorSequence,
    /// Parameters in tree order, at full precision.
    pub coefficients: Vec<f64>,
    pub score: f64,
    pub loss: f64,
    pub symbolic: String,
}

impl ComponentResult {
    pub fn record(&self) -> ScoreRecord {
        ScoreRecord {
            component: self.component,
            template: self.template,
            sequence: self.sequence.clone(),
            params: self.coefficients.clone(),
            loss: self.loss,
            score: self.score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rollout: RolloutMode,
    /// Step index of the first entry in the per-step arrays.
    pub first_step: usize,
    /// Forecast error per step, pooled over trajectories and components.
    pub per_step_mse: Vec<f64>,
    /// Forecast error per step for each component, `[component][step]`.
    pub per_step_mse_by_component: Vec<Vec<f64>>,
    /// Mean over the horizon of each component's forecast error.
    pub mse_by_component: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_forced_train_mse: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persistence_per_step_mse: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persistence_mse_by_component: Option<Vec<f64>>,
    /// Components whose forecast error is below the persistence baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components_beating_persistence: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rollout_failures: Vec<RolloutFailure>,
}

/// A rollout cut short by a diverging prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutFailure {
    pub kind: RolloutMode,
    pub trajectory: usize,
    /// First step whose prediction diverged.
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub config_echo: RunConfig,
    pub var_names: Vec<String>,
    pub components: Vec<ComponentResult>,
    /// Final candidate pool of each component, best first.
    pub pool: Vec<Vec<ScoreRecord>>,
    /// Per-epoch score summary of each component.
    pub history: Vec<Vec<EpochSummary>>,
    pub metrics: Metrics,
    pub scale_record: ScaleRecord,
}

impl ResultsDocument {
    pub fn system(&self) -> Result<SystemModel, PipelineError> {
        let records: Vec<ScoreRecord> = self
            .components
            .iter()
            .map(ComponentResult::record)
            .collect();
        assemble_system(&records, &self.var_names)
            .map_err(|e| PipelineError::new("results", ErrorKind::Data, e))
    }

    pub fn equations(&self) -> Vec<String> {
        self.components
            .iter()
            .map(|c| format!("d{}/dt = {}", c.variable, c.symbolic))
            .collect()
    }

    /// The learned system produced a diverging prediction during evaluation.
    pub fn rollout_failed(&self) -> bool {
        !self.metrics.rollout_failures.is_empty()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("results serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            PipelineError::new(
                "results",
                ErrorKind::Data,
                format!("{}: {}", e.path(), e.inner()),
            )
        })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| {
            PipelineError::new(
                "results",
                ErrorKind::Data,
                format!("{}: {e}", path.display()),
            )
        })?;
        Self::from_json(&text)
    }
}

/// Rollouts of the learned system and the metrics derived from them.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: Metrics,
    /// One predicted trajectory per test trajectory; row 0 is the initial state.
    pub forecasts: Vec<Trajectory>,
}

fn horizon_mean(by_component: &[Vec<f64>]) -> Vec<f64> {
    by_component
        .iter()
        .filter(|v| !v.is_empty())
        .map(|v| {
            let n = v.len() as f64;
            v.iter().map(|x| x / n).sum::<f64>()
        })
        .collect()
}

/// Rows `1..=horizon` of every trajectory.
fn window(ts: &[Trajectory], horizon: usize) -> Vec<Trajectory> {
    ts.iter().map(|t| t.slice(1..horizon + 1)).collect()
}

/// Synthetic mode: autonomous rollouts from each test initial state over the
/// full test horizon. Real mode: teacher-forced over the training window, then
/// autonomous from the last training row across the test window, compared with
/// a persistence forecast.
///
/// A rollout that diverges is recorded in `rollout_failures` and every
/// per-step array is cut to the steps that all rollouts completed.
pub fn evaluate<F: VectorField + ?Sized>(
    model: &F,
    mode: Mode,
    data: &PreparedData,
) -> Result<Evaluation, PipelineError> {
    let metric_err =
        |e: crate::forecast::ForecastError| PipelineError::new("forecast", ErrorKind::Data, e);
    let dt = data.test.dt();
    let mut failures = Vec::new();
    match mode {
        Mode::Synthetic => {
            let truths = data.test.trajectories();
            let mut forecasts = Vec::with_capacity(truths.len());
            for (k, t) in truths.iter().enumerate() {
                let r = rollout(
                    model,
                    t.row(0),
                    t.steps(),
                    dt,
                    RolloutMode::Autonomous,
                    None,
                )
                .map_err(metric_err)?;
                if let Some(step) = r.failed_at {
                    failures.push(RolloutFailure {
                        kind: RolloutMode::Autonomous,
                        trajectory: k,
                        step,
                    });
                }
                forecasts.push(r.states);
            }
            let horizon = forecasts.iter().map(Trajectory::steps).min().unwrap_or(0);
            let (pred, truth) = (window(&forecasts, horizon), window(truths, horizon));
            let by_component = per_step_mse_by_component(&pred, &truth).map_err(metric_err)?;
            Ok(Evaluation {
                metrics: Metrics {
                    rollout: RolloutMode::Autonomous,
                    first_step: 1,
                    per_step_mse: per_step_mse(&pred, &truth).map_err(metric_err)?,
                    mse_by_component: horizon_mean(&by_component),
                    per_step_mse_by_component: by_component,
                    teacher_forced_train_mse: None,
                    persistence_per_step_mse: None,
                    persistence_mse_by_component: None,
                    components_beating_persistence: None,
                    rollout_failures: failures,
                },
                forecasts,
            })
        }
        Mode::Real => {
            let train = &data.train.trajectories()[0];
            let future = &data.test.trajectories()[0];
            let tf = rollout(
                model,
                train.row(0),
                train.steps(),
                dt,
                RolloutMode::TeacherForced,
                Some(train),
            )
            .map_err(metric_err)?;
            if let Some(step) = tf.failed_at {
                failures.push(RolloutFailure {
                    kind: RolloutMode::TeacherForced,
                    trajectory: 0,
                    step,
                });
            }
            let tf_horizon = tf.states.steps();
            let tf_mse = per_step_mse(
                &window(std::slice::from_ref(&tf.states), tf_horizon),
                &window(std::slice::from_ref(train), tf_horizon),
            )
            .map_err(metric_err)?;

            // `future` holds the test rows only; prepend the anchor so that
            // row s of both sides is s steps after the last training row.
            let anchor = train.row(train.steps());
            let mut with_anchor = anchor.to_vec();
            with_anchor.extend_from_slice(future.values());
            let truth = Trajectory::new(with_anchor, future.dim());
            let fc = rollout(
                model,
                anchor,
                future.len(),
                dt,
                RolloutMode::Autonomous,
                None,
            )
            .map_err(metric_err)?;
            if let Some(step) = fc.failed_at {
                failures.push(RolloutFailure {
                    kind: RolloutMode::Autonomous,
                    trajectory: 0,
                    step,
                });
            }
            let horizon = fc.states.steps();
            let pred = window(std::slice::from_ref(&fc.states), horizon);
            let truth = window(std::slice::from_ref(&truth), horizon);
            let by_component = per_step_mse_by_component(&pred, &truth).map_err(metric_err)?;
            let baseline = persistence_baseline(anchor, &truth[0]).map_err(metric_err)?;
            let baseline_pooled: Vec<f64> = (0..horizon)
                .map(|s| baseline.iter().map(|c| c[s]).sum::<f64>() / baseline.len() as f64)
                .collect();
            let mse_by_component = horizon_mean(&by_component);
            let baseline_by_component = horizon_mean(&baseline);
            let beating = mse_by_component
                .iter()
                .zip(&baseline_by_component)
                .filter(|(m, b)| m < b)
                .count();
            Ok(Evaluation {
                metrics: Metrics {
                    rollout: RolloutMode::Autonomous,
                    first_step: train.len(),
                    per_step_mse: per_step_mse(&pred, &truth).map_err(metric_err)?,
                    per_step_mse_by_component: by_component,
                    mse_by_component,
                    teacher_forced_train_mse: Some(tf_mse),
                    persistence_per_step_mse: Some(baseline_pooled),
                    persistence_mse_by_component: Some(baseline_by_component),
                    components_beating_persistence: Some(beating),
                    rollout_failures: failures,
                },
                forecasts: vec![fc.states],
            })
        }
    }
}

/// Runs every stage and returns the results document; nothing is written.
pub fn run_pipeline(cfg: &RunConfig) -> Result<ResultsDocument, PipelineError> {
    let data = prepare_data(cfg)?;
    let search_cfg = cfg.search_config();
    let outcomes =
        search_all(&data.train, &search_cfg, &OperatorSet::default()).map_err(search_error)?;
    let var_names = data.train.var_names().to_vec();
    let records: Vec<ScoreRecord> = outcomes.iter().map(|o| o.best.clone()).collect();
    let model = assemble_system(&records, &var_names).map_err(search_error)?;

    let components = records
        .iter()
        .zip(model.expressions())
        .map(|(r, e)| ComponentResult {
            component: r.component,
            variable: var_names[r.component].clone(),
            template: r.template,
            sequence: r.sequence.clone(),
            coefficients: r.params.clone(),
            score: r.score,
            loss: r.loss,
            symbolic: e.to_symbolic_string(&var_names, SYMBOLIC_PRECISION),
        })
        .collect();
    let evaluation = evaluate(&model, cfg.mode, &data)?;

    Ok(ResultsDocument {
        config_echo: cfg.clone(),
        var_names,
        components,
        pool: outcomes.iter().map(|o| o.pool.entries().to_vec()).collect(),
        history: outcomes.into_iter().map(|o| o.history).collect(),
        metrics: evaluation.metrics,
        scale_record: data.scale,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(|e| {
        PipelineError::new(
            "output",
            ErrorKind::Data,
            format!("{}: {e}", path.display()),
        )
    })
}

fn mse_table(mse: &[f64], first_step: usize) -> Result<Vec<u8>, PipelineError> {
    let mut buf = Vec::new();
    io::write_mse_csv(&mut buf, mse, first_step)
        .map_err(|e| PipelineError::new("output", ErrorKind::Data, e))?;
    Ok(buf)
}

/// Writes `results.json`, `equations.txt`, `mse.csv` and, when a persistence
/// baseline exists, `persistence_mse.csv` into `dir`.
pub fn write_outputs(doc: &ResultsDocument, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| {
        PipelineError::new("output", ErrorKind::Data, format!("{}: {e}", dir.display()))
    })?;
    write_file(&dir.join("results.json"), doc.to_json().as_bytes())?;
    write_report(doc, dir)
}

/// The derived artifacts only: equations and per-step MSE tables.
pub fn write_report(doc: &ResultsDocument, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| {
        PipelineError::new("output", ErrorKind::Data, format!("{}: {e}", dir.display()))
    })?;
    let mut eqs = doc.equations().join("\n");
    eqs.push('\n');
    write_file(&dir.join("equations.txt"), eqs.as_bytes())?;
    let m = &doc.metrics;
    write_file(
        &dir.join("mse.csv"),
        &mse_table(&m.per_step_mse, m.first_step)?,
    )?;
    if let Some(p) = &m.persistence_per_step_mse {
        write_file(
            &dir.join("persistence_mse.csv"),
            &mse_table(p, m.first_step)?,
        )?;
    }
    Ok(())
}

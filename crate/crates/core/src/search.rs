//! The outer search loop: sample operator sequences from the controller, score
//! each by fitting its parameters, keep the best in a bounded pool, and update
//! the controller toward the top of each batch.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControllerError, ControllerPolicy};
use crate::dataset::TrajectoryDataset;
use crate::expr::{
    CompiledExpression, ExprError, ExpressionParams, OperatorSequence, OperatorSet, Program,
    TemplateKind, TreeTemplate,
};
use crate::forecast::VectorField;
use crate::loss::{ComponentData, LossError, ResidualObjective};
use crate::optim::{fine_tune, two_stage_minimize, Objective, OptimConfig};

/// Re-initializations tried when the first random parameters give a
/// non-finite loss.
pub const MAX_REINITS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("{field}: {message}")]
    Config { field: String, message: String },
    #[error("no finite-loss candidate found for component {0}")]
    NoValidCandidate(usize),
    #[error("missing or duplicate record for component {0}")]
    MissingComponent(usize),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub pool_capacity: usize,
    pub nu: f64,
    pub epsilon: f64,
    pub controller_lr: f64,
    pub optim: OptimConfig,
    /// Template used for every component without an explicit override.
    pub template: TemplateKind,
    /// Optional per-component templates, indexed by component.
    pub component_templates: Option<Vec<TemplateKind>>,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 10,
            pool_capacity: 10,
            nu: 0.2,
            epsilon: 0.1,
            controller_lr: 0.002,
            optim: OptimConfig::default(),
            template: TemplateKind::Type2,
            component_templates: None,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn template_for(&self, component: usize) -> TemplateKind {
        self.component_templates
            .as_ref()
            .and_then(|t| t.get(component).copied())
            .unwrap_or(self.template)
    }

    pub fn check(&self) -> Result<(), SearchError> {
        let bad = |field: &str, message: &str| {
            Err(SearchError::Config {
                field: field.to_string(),
                message: message.to_string(),
            })
        };
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.pool_capacity == 0 {
            return bad("pool_capacity", "must be at least 1");
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return bad("nu", "must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon", "must lie in [0, 1]");
        }
        if !(self.controller_lr >= 0.0 && self.controller_lr.is_finite()) {
            return bad("controller_lr", "must be a nonnegative finite number");
        }
        if let Err((field, message)) = self.optim.check() {
            return Err(SearchError::Config {
                field: format!("optim.{field}"),
                message,
            });
        }
        Ok(())
    }
}

/// `1 / (1 + loss)`, or 0 for a failed (non-finite) fit.
pub fn score_from_loss(loss: f64) -> f64 {
    if loss.is_finite() && loss >= 0.0 {
        1.0 / (1.0 + loss)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub component: usize,
    pub template: TemplateKind,
    pub sequence: OperatorSequence,
    pub params: Vec<f64>,
    pub loss: f64,
    pub score: f64,
}

impl ScoreRecord {
    pub fn is_valid(&self) -> bool {
        self.loss.is_finite() && self.score > 0.0
    }

    pub fn expression(&self, input_dim: usize) -> Result<CompiledExpression, ExprError> {
        CompiledExpression::new(
            TreeTemplate::new(self.template, input_dim)?,
            self.sequence.clone(),
            ExpressionParams(self.params.clone()),
        )
    }
}

/// Mixes a base seed with a path of indices into an independent 64-bit seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter()
        .fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Fits the parameters of `sequence` by two-stage optimization from a random
/// start in [-1, 1] and scores the result.
pub fn score_sequence<R: Rng + ?Sized>(
    sequence: &OperatorSequence,
    template: &TreeTemplate,
    data: &ComponentData,
    optim: &OptimConfig,
    rng: &mut R,
) -> Result<ScoreRecord, SearchError> {
    let program = Program::new(template, sequence)?;
    let obj = ResidualObjective::new(program, data)?;
    let p = obj.param_len();

    let mut init: Vec<f64> = Vec::new();
    let mut finite = false;
    for _ in 0..=MAX_REINITS {
        init = (0..p).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        if obj.value(&init).is_finite() {
            finite = true;
            break;
        }
    }
    let fitted = if finite {
        two_stage_minimize(&obj, &init, optim).ok()
    } else {
        None
    };
    let (params, loss) = match fitted {
        Some(r) => (r.params, r.loss),
        None => (init, f64::INFINITY),
    };
    Ok(ScoreRecord {
        component: data.component(),
        template: template.kind(),
        sequence: sequence.clone(),
        params,
        loss,
        score: score_from_loss(loss),
    })
}

fn outranks(a: &ScoreRecord, b: &ScoreRecord) -> bool {
    a.score > b.score || (a.score == b.score && a.loss < b.loss)
}

/// The `capacity` best distinct sequences seen so far, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    capacity: usize,
    entries: Vec<ScoreRecord>,
}

impl CandidatePool {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "pool capacity must be positive");
        Self {
            capacity,
            entries: Vec::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[ScoreRecord] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn best(&self) -> Option<&ScoreRecord> {
        self.entries.first()
    }

    /// Inserts `record` unless it is a failed fit or not better than what is
    /// already kept. A repeated sequence keeps its better score.
    ///
    /// Ranking is by score, then by loss: scores of very small losses round to
    /// exactly 1 and would otherwise tie.
    pub fn insert(&mut self, record: ScoreRecord) {
        if !record.is_valid() {
            return;
        }
        if let Some(pos) = self
            .entries
            .iter()
            .position(|e| e.sequence == record.sequence)
        {
            if outranks(&record, &self.entries[pos]) {
                self.entries.remove(pos);
                self.place(record);
            }
            return;
        }
        if self.entries.len() < self.capacity {
            self.place(record);
        } else if self
            .entries
            .last()
            .is_some_and(|worst| outranks(&record, worst))
        {
            self.entries.pop();
            self.place(record);
        }
    }

    fn place(&mut self, record: ScoreRecord) {
        let pos = self.entries.partition_point(|e| !outranks(&record, e));
        self.entries.insert(pos, record);
    }

    fn resort(&mut self) {
        self.entries
            .sort_by(|a, b| b.score.total_cmp(&a.score).then(a.loss.total_cmp(&b.loss)));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub batch_best: f64,
    pub running_best: f64,
    /// Distinct sequences scored this epoch.
    pub scored: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: ScoreRecord,
    pub pool: CandidatePool,
    pub history: Vec<EpochSummary>,
}

/// Runs the full search for one state component (zero-based) of `train`.
pub fn search_component(
    train: &TrajectoryDataset,
    component: usize,
    cfg: &SearchConfig,
    ops: &OperatorSet,
) -> Result<SearchOutcome, SearchError> {
    cfg.check()?;
    let data = ComponentData::new(train, component)?;
    let template = TreeTemplate::new(cfg.template_for(component), train.dim())?;
    let mut policy = ControllerPolicy::new(&template, ops.clone(), cfg.epsilon, cfg.controller_lr);
    let mut sampler = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[component as u64, 0]));
    let mut pool = CandidatePool::new(cfg.pool_capacity);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut running_best = 0.0f64;

    for epoch in 0..cfg.epochs {
        let batch = policy.sample_sequences(cfg.batch_size, &mut sampler);

        let mut first_seen: HashMap<&OperatorSequence, usize> = HashMap::new();
        let mut unique: Vec<usize> = Vec::new();
        let slot: Vec<usize> = batch
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                *first_seen.entry(&s.sequence).or_insert_with(|| {
                    unique.push(i);
                    unique.len() - 1
                })
            })
            .collect();

        let records: Vec<ScoreRecord> = unique
            .par_iter()
            .map(|&i| {
                let seed = derive_seed(cfg.seed, &[component as u64, 1, epoch as u64, i as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                score_sequence(
                    &batch.samples[i].sequence,
                    &template,
                    &data,
                    &cfg.optim,
                    &mut rng,
                )
            })
            .collect::<Result<_, _>>()?;

        let scores: Vec<f64> = slot.iter().map(|&u| records[u].score).collect();
        let batch_best = scores.iter().copied().fold(0.0, f64::max);
        running_best = running_best.max(batch_best);
        history.push(EpochSummary {
            epoch,
            batch_best,
            running_best,
            scored: records.len(),
        });

        for r in records {
            pool.insert(r);
        }
        policy.policy_update(&batch, &scores, cfg.nu)?;
    }

    for entry in pool.entries.iter_mut() {
        let program = Program::new(&template, &entry.sequence)?;
        let obj = ResidualObjective::new(program, &data)?;
        if let Ok(r) = fine_tune(&obj, &entry.params, &cfg.optim) {
            if r.loss < entry.loss {
                entry.params = r.params;
                entry.loss = r.loss;
                entry.score = score_from_loss(r.loss);
            }
        }
    }
    pool.resort();

    let best = pool
        .best()
        .cloned()
        .ok_or(SearchError::NoValidCandidate(component))?;
    Ok(SearchOutcome {
        best,
        pool,
        history,
    })
}

/// Independent searches for every component of `train`.
pub fn search_all(
    train: &TrajectoryDataset,
    cfg: &SearchConfig,
    ops: &OperatorSet,
) -> Result<Vec<SearchOutcome>, SearchError> {
    (0..train.dim())
        .into_par_iter()
        .map(|c| search_component(train, c, cfg, ops))
        .collect()
}

/// The learned vector field: one expression per state component.
#[derive(Debug, Clone)]
pub struct SystemModel {
    expressions: Vec<CompiledExpression>,
    var_names: Vec<String>,
}

impl SystemModel {
    pub fn expressions(&self) -> &[CompiledExpression] {
        &self.expressions
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.expressions.iter().map(|e| e.evaluate(x)).collect()
    }

    /// One `d<name>/dt = ...` line per component.
    pub fn equations(&self, precision: usize) -> Vec<String> {
        self.expressions
            .iter()
            .zip(&self.var_names)
            .map(|(e, name)| {
                format!(
                    "d{name}/dt = {}",
                    e.to_symbolic_string(&self.var_names, precision)
                )
            })
            .collect()
    }
}

impl VectorField for SystemModel {
    fn dim(&self) -> usize {
        self.expressions.len()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        for (o, e) in out.iter_mut().zip(&self.expressions) {
            match e.evaluate(x) {
                Ok(v) => *o = v,
                Err(_) => return false,
            }
        }
        true
    }
}

/// Stacks one record per component into a vector-valued model. Records may be
/// given in any order but must cover components `0..var_names.len()` exactly once.
pub fn assemble_system(
    records: &[ScoreRecord],
    var_names: &[String],
) -> Result<SystemModel, SearchError> {
    let d = var_names.len();
    let mut slots: Vec<Option<&ScoreRecord>> = vec![None; d];
    for r in records {
        match slots.get_mut(r.component) {
            Some(slot @ None) => *slot = Some(r),
            _ => return Err(SearchError::MissingComponent(r.component)),
        }
    }
    let expressions = slots
        .iter()
        .enumerate()
        .map(|(c, r)| {
            r.ok_or(SearchError::MissingComponent(c))
                .and_then(|r| Ok(r.expression(d)?))
        })
        .collect::<Result<_, _>>()?;
    Ok(SystemModel {
        expressions,
        var_names: var_names.to_vec(),
    })
}

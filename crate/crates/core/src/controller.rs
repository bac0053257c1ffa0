//! Operator-sequence controller: one independent categorical distribution per
//! template slot, sampled epsilon-greedily and trained with a risk-seeking
//! policy gradient that only rewards the top `nu` fraction of each batch.

use rand::Rng;
use thiserror::Error;

use crate::expr::{OperatorSequence, OperatorSet, SlotKind, TreeTemplate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("score {score} at batch index {index} is not a finite value in [0, 1]")]
    InvalidScore { index: usize, score: f64 },
    #[error("{scores} scores for a batch of {batch}")]
    LengthMismatch { scores: usize, batch: usize },
    #[error("quantile fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("operator `{0}` is not admissible in its slot")]
    UnknownOperator(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerPolicy {
    ops: OperatorSet,
    slot_kinds: Vec<SlotKind>,
    logits: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub lr: f64,
}

/// One drawn sequence with the per-slot choices that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSequence {
    pub sequence: OperatorSequence,
    pub indices: Vec<usize>,
    /// Whether each slot was drawn by the uniform exploration branch.
    pub explored: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub samples: Vec<SampledSequence>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl ControllerPolicy {
    /// Uniform policy (all logits zero) over `ops` for every slot of `template`.
    pub fn new(template: &TreeTemplate, ops: OperatorSet, epsilon: f64, lr: f64) -> Self {
        let slot_kinds: Vec<SlotKind> = template.slot_kinds().collect();
        let logits = slot_kinds
            .iter()
            .map(|&k| vec![0.0; ops.arity(k)])
            .collect();
        Self {
            ops,
            slot_kinds,
            logits,
            epsilon,
            lr,
        }
    }

    pub fn operators(&self) -> &OperatorSet {
        &self.ops
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.logits
    }

    pub fn probabilities(&self, slot: usize) -> Vec<f64> {
        softmax(&self.logits[slot])
    }

    pub fn slot_count(&self) -> usize {
        self.slot_kinds.len()
    }

    /// Per-slot choice indices of `sequence` in this policy's operator lists.
    pub fn indices_of(&self, sequence: &OperatorSequence) -> Result<Vec<usize>, ControllerError> {
        sequence
            .0
            .iter()
            .zip(&self.slot_kinds)
            .map(|(&op, &kind)| {
                let idx = self
                    .ops
                    .index_of(op)
                    .ok_or_else(|| ControllerError::UnknownOperator(op.to_string()))?;
                if self.ops.operator(kind, idx) == op {
                    Ok(idx)
                } else {
                    Err(ControllerError::UnknownOperator(op.to_string()))
                }
            })
            .collect()
    }

    fn sequence_from(&self, indices: &[usize]) -> OperatorSequence {
        OperatorSequence(
            indices
                .iter()
                .zip(&self.slot_kinds)
                .map(|(&i, &k)| self.ops.operator(k, i))
                .collect(),
        )
    }

    pub fn sample_sequences<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> SampleBatch {
        let probs: Vec<Vec<f64>> = (0..self.slot_count())
            .map(|j| self.probabilities(j))
            .collect();
        let samples = (0..n)
            .map(|_| {
                let mut indices = Vec::with_capacity(probs.len());
                let mut explored = Vec::with_capacity(probs.len());
                for p in &probs {
                    let uniform = rng.gen::<f64>() < self.epsilon;
                    let idx = if uniform {
                        rng.gen_range(0..p.len())
                    } else {
                        draw(p, rng.gen::<f64>())
                    };
                    indices.push(idx);
                    explored.push(uniform);
                }
                SampledSequence {
                    sequence: self.sequence_from(&indices),
                    indices,
                    explored,
                }
            })
            .collect();
        SampleBatch { samples }
    }

    /// Log-probability under the softmax policy (exploration ignored).
    pub fn log_prob_indices(&self, indices: &[usize]) -> f64 {
        indices
            .iter()
            .enumerate()
            .map(|(j, &a)| {
                let l = &self.logits[j];
                let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                l[a] - lse
            })
            .sum()
    }

    pub fn log_prob(&self, sequence: &OperatorSequence) -> Result<f64, ControllerError> {
        Ok(self.log_prob_indices(&self.indices_of(sequence)?))
    }

    /// One ascent step on the risk-seeking objective using the quantile
    /// baseline: samples below the `(1 - nu)` batch quantile contribute nothing.
    pub fn policy_update(
        &mut self,
        batch: &SampleBatch,
        scores: &[f64],
        nu: f64,
    ) -> Result<(), ControllerError> {
        if scores.len() != batch.len() {
            return Err(ControllerError::LengthMismatch {
                scores: scores.len(),
                batch: batch.len(),
            });
        }
        if let Some((index, &score)) = scores
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && (0.0..=1.0).contains(*s)))
        {
            return Err(ControllerError::InvalidScore { index, score });
        }
        if batch.is_empty() {
            return Ok(());
        }
        let threshold = quantile_threshold(scores, nu)?;
        let top: Vec<usize> = (0..scores.len())
            .filter(|&i| scores[i] >= threshold)
            .collect();
        let norm = 1.0 / top.len() as f64;

        let probs: Vec<Vec<f64>> = (0..self.slot_count())
            .map(|j| self.probabilities(j))
            .collect();
        let mut grad: Vec<Vec<f64>> = probs.iter().map(|p| vec![0.0; p.len()]).collect();
        for &i in &top {
            let w = (scores[i] - threshold) * norm;
            if w == 0.0 {
                continue;
            }
            for (j, &a) in batch.samples[i].indices.iter().enumerate() {
                for (k, g) in grad[j].iter_mut().enumerate() {
                    let indicator = if k == a { 1.0 } else { 0.0 };
                    *g += w * (indicator - probs[j][k]);
                }
            }
        }
        for (l, g) in self.logits.iter_mut().zip(&grad) {
            for (lk, gk) in l.iter_mut().zip(g) {
                *lk += self.lr * gk;
            }
        }
        Ok(())
    }
}

fn draw(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Empirical `(1 - nu)`-quantile by nearest rank from the top: the
/// `ceil(nu * n)`-th largest score, so that exactly the top `ceil(nu * n)`
/// entries (plus ties) are at or above it.
pub fn quantile_threshold(scores: &[f64], nu: f64) -> Result<f64, ControllerError> {
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(ControllerError::InvalidFraction(nu));
    }
    assert!(!scores.is_empty(), "quantile of an empty score list");
    let n = scores.len();
    // guard against nu * n landing a hair above an integer
    let k = ((nu * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[k - 1])
}

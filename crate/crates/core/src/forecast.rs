//! Explicit-Euler rollouts of a vector field and per-step error metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Trajectory;

/// Anything that maps a state to its time derivative.
pub trait VectorField {
    fn dim(&self) -> usize;

    /// Writes `f(x)` into `out`; returns `false` if any entry is non-finite or
    /// the evaluation otherwise failed.
    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> bool;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("state has {got} entries, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("teacher forcing needs {needed} ground-truth rows, got {got}")]
    TruthTooShort { needed: usize, got: usize },
    #[error("teacher-forced rollout requires ground truth")]
    MissingTruth,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    /// Each step starts from the ground-truth state.
    TeacherForced,
    /// Each step starts from the previous prediction.
    Autonomous,
}

/// States larger than this in magnitude count as diverged. Squared errors of
/// bounded states, and their averages, then stay finite.
pub const DIVERGENCE_BOUND: f64 = 1e150;

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Row 0 is the initial state; row `s` is the prediction for step `s`.
    pub states: Trajectory,
    /// First step whose prediction was non-finite or beyond
    /// [`DIVERGENCE_BOUND`], if the rollout was cut short.
    pub failed_at: Option<usize>,
}

impl Rollout {
    pub fn is_complete(&self) -> bool {
        self.failed_at.is_none()
    }
}

/// Propagates `init` for `steps` Euler steps of size `dt`.
///
/// In teacher-forced mode the input of step `s` is `truth.row(s)`, so `truth`
/// must hold at least `steps` rows; `init` is still reported as row 0.
pub fn rollout<F: VectorField + ?Sized>(
    model: &F,
    init: &[f64],
    steps: usize,
    dt: f64,
    mode: RolloutMode,
    truth: Option<&Trajectory>,
) -> Result<Rollout, ForecastError> {
    let d = model.dim();
    if init.len() != d {
        return Err(ForecastError::DimensionMismatch {
            expected: d,
            got: init.len(),
        });
    }
    if mode == RolloutMode::TeacherForced {
        let t = truth.ok_or(ForecastError::MissingTruth)?;
        if t.dim() != d {
            return Err(ForecastError::DimensionMismatch {
                expected: d,
                got: t.dim(),
            });
        }
        if t.len() < steps {
            return Err(ForecastError::TruthTooShort {
                needed: steps,
                got: t.len(),
            });
        }
    }

    let mut values = Vec::with_capacity((steps + 1) * d);
    values.extend_from_slice(init);
    let mut f = vec![0.0; d];
    let mut failed_at = None;
    for s in 0..steps {
        let input: Vec<f64> = match (mode, truth) {
            (RolloutMode::TeacherForced, Some(t)) => t.row(s).to_vec(),
            _ => values[s * d..(s + 1) * d].to_vec(),
        };
        let ok = model.eval_into(&input, &mut f);
        let next: Vec<f64> = input.iter().zip(&f).map(|(x, fx)| x + dt * fx).collect();
        if !ok
            || next
                .iter()
                .any(|v| v.is_nan() || v.abs() > DIVERGENCE_BOUND)
        {
            failed_at = Some(s + 1);
            break;
        }
        values.extend_from_slice(&next);
    }
    Ok(Rollout {
        states: Trajectory::new(values, d),
        failed_at,
    })
}

fn check_shapes(
    predicted: &[Trajectory],
    truth: &[Trajectory],
) -> Result<(usize, usize), ForecastError> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(ForecastError::Shape(format!(
            "{} predicted vs {} true trajectories",
            predicted.len(),
            truth.len()
        )));
    }
    let (rows, dim) = (truth[0].len(), truth[0].dim());
    for (k, (p, t)) in predicted.iter().zip(truth).enumerate() {
        if p.len() != rows || t.len() != rows || p.dim() != dim || t.dim() != dim {
            return Err(ForecastError::Shape(format!(
                "trajectory {k}: predicted {}x{}, truth {}x{}, expected {rows}x{dim}",
                p.len(),
                p.dim(),
                t.len(),
                t.dim()
            )));
        }
    }
    Ok((rows, dim))
}

/// Squared error at each step, averaged over trajectories and components.
pub fn per_step_mse(
    predicted: &[Trajectory],
    truth: &[Trajectory],
) -> Result<Vec<f64>, ForecastError> {
    let (rows, dim) = check_shapes(predicted, truth)?;
    let denom = (predicted.len() * dim) as f64;
    Ok((0..rows)
        .map(|s| {
            let total: f64 = predicted
                .iter()
                .zip(truth)
                .flat_map(|(p, t)| p.row(s).iter().zip(t.row(s)).map(|(a, b)| (a - b).powi(2)))
                .sum();
            total / denom
        })
        .collect())
}

/// Squared error at each step, averaged over trajectories only; indexed
/// `[component][step]`.
pub fn per_step_mse_by_component(
    predicted: &[Trajectory],
    truth: &[Trajectory],
) -> Result<Vec<Vec<f64>>, ForecastError> {
    let (rows, dim) = check_shapes(predicted, truth)?;
    let n = predicted.len() as f64;
    Ok((0..dim)
        .map(|c| {
            (0..rows)
                .map(|s| {
                    predicted
                        .iter()
                        .zip(truth)
                        .map(|(p, t)| (p.row(s)[c] - t.row(s)[c]).powi(2))
                        .sum::<f64>()
                        / n
                })
                .collect()
        })
        .collect())
}

/// Per-step, per-component squared error of the constant forecast `anchor`
/// against `future`; indexed `[component][step]`.
pub fn persistence_baseline(
    anchor: &[f64],
    future: &Trajectory,
) -> Result<Vec<Vec<f64>>, ForecastError> {
    if anchor.len() != future.dim() {
        return Err(ForecastError::DimensionMismatch {
            expected: future.dim(),
            got: anchor.len(),
        });
    }
    Ok((0..future.dim())
        .map(|c| future.rows().map(|r| (r[c] - anchor[c]).powi(2)).collect())
        .collect())
}

//! Per-component Euler-residual loss
//!
//! `L = 1/M * sum_s (x_i[s+1] - x_i[s] - dt * phi(x[s]))^2`, pooled with uniform
//! weight over every consecutive pair of every trajectory.

use thiserror::Error;

use crate::dataset::TrajectoryDataset;
use crate::expr::{CompiledExpression, ExprError, Program, MAX_NODES};
use crate::optim::Objective;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("component {component} out of range for dimension {dim}")]
    ComponentOutOfRange { component: usize, dim: usize },
    #[error("expression input dimension {expr} does not match data dimension {data}")]
    DimensionMismatch { expr: usize, data: usize },
    #[error("expression produced a non-finite value on the training data")]
    EvaluationFailure,
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Regression inputs and targets for one state component, flattened across
/// all trajectories in a fixed order.
#[derive(Debug, Clone)]
pub struct ComponentData {
    inputs: Vec<f64>,
    increments: Vec<f64>,
    dim: usize,
    dt: f64,
    component: usize,
}

impl ComponentData {
    /// `component` is zero-based.
    pub fn new(data: &TrajectoryDataset, component: usize) -> Result<Self, LossError> {
        let dim = data.dim();
        if component >= dim {
            return Err(LossError::ComponentOutOfRange { component, dim });
        }
        let n = data.pair_count();
        let mut inputs = Vec::with_capacity(n * dim);
        let mut increments = Vec::with_capacity(n);
        for t in data.trajectories() {
            for s in 0..t.steps() {
                let (cur, next) = (t.row(s), t.row(s + 1));
                inputs.extend_from_slice(cur);
                increments.push(next[component] - cur[component]);
            }
        }
        Ok(Self {
            inputs,
            increments,
            dim,
            dt: data.dt(),
            component,
        })
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn component(&self) -> usize {
        self.component
    }

    pub fn input(&self, s: usize) -> &[f64] {
        &self.inputs[s * self.dim..(s + 1) * self.dim]
    }
}

/// The loss of one operator sequence as a function of its parameters.
///
/// Leaf operators act on raw inputs only, so `u(x_j)` is tabulated once per
/// sample and reused across every optimizer iteration.
pub struct ResidualObjective<'a> {
    program: Program,
    features: Vec<Vec<f64>>,
    data: &'a ComponentData,
}

impl<'a> ResidualObjective<'a> {
    pub fn new(program: Program, data: &'a ComponentData) -> Result<Self, LossError> {
        if program.input_dim() != data.dim() {
            return Err(LossError::DimensionMismatch {
                expr: program.input_dim(),
                data: data.dim(),
            });
        }
        let features = program
            .leaf_ops()
            .into_iter()
            .map(|op| match op {
                Some(u) => data.inputs.iter().map(|&x| u.apply(x)).collect(),
                None => Vec::new(),
            })
            .collect();
        Ok(Self {
            program,
            features,
            data,
        })
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn param_len(&self) -> usize {
        self.program.param_len()
    }

    fn accumulate(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let d = self.data.dim;
        let dt = self.data.dt;
        let n = self.data.len();
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let scale = 1.0 / n as f64;
        let mut vals = [0.0; MAX_NODES];
        let mut total = 0.0;
        for s in 0..n {
            let base = s * d;
            let feature = |slot: usize, j: usize| self.features[slot][base + j];
            let phi = self.program.forward(theta, feature, &mut vals);
            let r = self.data.increments[s] - dt * phi;
            total += r * r;
            if let Some(g) = grad.as_deref_mut() {
                self.program
                    .backward(theta, feature, &vals, -2.0 * dt * r * scale, g);
            }
        }
        let loss = total * scale;
        if loss.is_finite() {
            loss
        } else {
            f64::INFINITY
        }
    }
}

impl Objective for ResidualObjective<'_> {
    fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.accumulate(theta, Some(grad))
    }

    fn value(&self, theta: &[f64]) -> f64 {
        self.accumulate(theta, None)
    }
}

fn objective_for<'a>(
    expr: &CompiledExpression,
    data: &'a ComponentData,
) -> Result<ResidualObjective<'a>, LossError> {
    ResidualObjective::new(expr.program().clone(), data)
}

/// Euler-residual loss of `expr` against component `component` (zero-based).
pub fn euler_residual_loss(
    expr: &CompiledExpression,
    data: &TrajectoryDataset,
    component: usize,
) -> Result<f64, LossError> {
    let cd = ComponentData::new(data, component)?;
    let loss = objective_for(expr, &cd)?.value(expr.params().as_slice());
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(LossError::EvaluationFailure)
    }
}

/// Loss together with its exact gradient with respect to the parameters.
pub fn loss_and_gradient(
    expr: &CompiledExpression,
    data: &TrajectoryDataset,
    component: usize,
) -> Result<(f64, Vec<f64>), LossError> {
    let cd = ComponentData::new(data, component)?;
    let obj = objective_for(expr, &cd)?;
    let mut grad = vec![0.0; obj.param_len()];
    let loss = obj.value_and_gradient(expr.params().as_slice(), &mut grad);
    if loss.is_finite() && grad.iter().all(|g| g.is_finite()) {
        Ok((loss, grad))
    } else {
        Err(LossError::EvaluationFailure)
    }
}

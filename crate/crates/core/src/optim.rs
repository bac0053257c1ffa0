//! Continuous parameter optimization: an Adam warm-up stage, a BFGS refinement
//! stage, and the low-rate fine-tuning pass applied to pool candidates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A differentiable scalar field over a flat parameter vector.
pub trait Objective {
    /// Returns the loss and writes the gradient into `grad` (overwriting it).
    fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64;

    fn value(&self, theta: &[f64]) -> f64 {
        let mut scratch = vec![0.0; theta.len()];
        self.value_and_gradient(theta, &mut scratch)
    }
}

impl<F> Objective for F
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self(theta, grad)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("loss is not finite at the initial parameters")]
    NonFiniteLoss,
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub t1_iters: usize,
    pub t2_iters: usize,
    pub t3_iters: usize,
    pub lr_first: f64,
    pub lr_finetune: f64,
    pub grad_tol: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            t1_iters: 150,
            t2_iters: 100,
            t3_iters: 100,
            lr_first: 0.05,
            lr_finetune: 0.005,
            grad_tol: 1e-8,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
        }
    }
}

impl OptimConfig {
    /// Returns `(field, message)` for the first invalid field.
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        if !(self.lr_first > 0.0 && self.lr_first.is_finite()) {
            return Err(("lr_first", "must be a positive finite number".into()));
        }
        if !(self.lr_finetune > 0.0 && self.lr_finetune.is_finite()) {
            return Err(("lr_finetune", "must be a positive finite number".into()));
        }
        if self.lr_finetune >= self.lr_first {
            return Err(("lr_finetune", "must be smaller than lr_first".into()));
        }
        if !(self.grad_tol >= 0.0 && self.grad_tol.is_finite()) {
            return Err(("grad_tol", "must be a nonnegative finite number".into()));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(("armijo_c", "must lie in (0, 1)".into()));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(("backtrack_factor", "must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    IterationLimit,
    GradientTolerance,
    LineSearchFailure,
    NonFiniteIterate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub params: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam for `iters` steps. Returns the best iterate seen, so the
/// reported loss never exceeds the loss at `init`.
pub fn minimize_first_order<O: Objective + ?Sized>(
    obj: &O,
    init: &[f64],
    iters: usize,
    lr: f64,
) -> Result<OptimResult, OptimError> {
    let n = init.len();
    let mut theta = init.to_vec();
    let mut grad = vec![0.0; n];
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];

    let f0 = obj.value_and_gradient(&theta, &mut grad);
    if !f0.is_finite() || !all_finite(&grad) {
        return Err(OptimError::NonFiniteLoss);
    }
    let mut best_loss = f0;
    let mut best = theta.clone();
    let mut termination = Termination::IterationLimit;
    let mut used = 0;

    for k in 1..=iters {
        let b1 = 1.0 - ADAM_BETA1.powi(k as i32);
        let b2 = 1.0 - ADAM_BETA2.powi(k as i32);
        for i in 0..n {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let mh = m[i] / b1;
            let vh = v[i] / b2;
            theta[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
        used = k;
        let f = obj.value_and_gradient(&theta, &mut grad);
        if !f.is_finite() || !all_finite(&grad) {
            termination = Termination::NonFiniteIterate;
            break;
        }
        if f < best_loss {
            best_loss = f;
            best.copy_from_slice(&theta);
        }
    }

    Ok(OptimResult {
        params: best,
        loss: best_loss,
        iterations: used,
        converged: false,
        termination,
    })
}

/// Line-search and stopping settings for [`minimize_bfgs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsSettings {
    pub grad_tol: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    /// Curvature updates with `s.y <= curvature_eps * |s| * |y|` are skipped.
    /// The test is relative so that it behaves the same for losses of any scale.
    pub curvature_eps: f64,
}

impl Default for BfgsSettings {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 50,
            curvature_eps: 1e-10,
        }
    }
}

impl From<&OptimConfig> for BfgsSettings {
    fn from(cfg: &OptimConfig) -> Self {
        Self {
            grad_tol: cfg.grad_tol,
            armijo_c: cfg.armijo_c,
            backtrack_factor: cfg.backtrack_factor,
            ..Self::default()
        }
    }
}

/// BFGS on the inverse Hessian with Armijo backtracking.
pub fn minimize_bfgs<O: Objective + ?Sized>(
    obj: &O,
    init: &[f64],
    iters: usize,
    settings: &BfgsSettings,
) -> Result<OptimResult, OptimError> {
    let n = init.len();
    let mut x = init.to_vec();
    let mut g = vec![0.0; n];
    let mut f = obj.value_and_gradient(&x, &mut g);
    if !f.is_finite() || !all_finite(&g) {
        return Err(OptimError::NonFiniteLoss);
    }

    let mut h = identity(n);
    let mut scaled = false;
    let mut p = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut hy = vec![0.0; n];

    let mut termination = Termination::IterationLimit;
    let mut used = 0;

    for k in 0..iters {
        if norm(&g) <= settings.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        mat_vec(&h, &g, &mut p);
        p.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&g, &p);
        if slope.is_nan() || slope >= 0.0 {
            h = identity(n);
            scaled = false;
            p.iter_mut().zip(&g).for_each(|(pi, gi)| *pi = -gi);
            slope = dot(&g, &p);
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.max_backtracks {
            for i in 0..n {
                x_new[i] = x[i] + t * p[i];
            }
            let f_new = obj.value_and_gradient(&x_new, &mut g_new);
            if f_new.is_finite() && all_finite(&g_new) && f_new <= f + settings.armijo_c * t * slope
            {
                accepted = Some(f_new);
                break;
            }
            t *= settings.backtrack_factor;
        }
        let Some(f_new) = accepted else {
            termination = Termination::LineSearchFailure;
            break;
        };
        used = k + 1;

        for i in 0..n {
            s[i] = x_new[i] - x[i];
            y[i] = g_new[i] - g[i];
        }
        let sy = dot(&s, &y);
        if sy > settings.curvature_eps * norm(&s) * norm(&y) {
            if !scaled {
                let gamma = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= gamma);
                scaled = true;
            }
            bfgs_update(&mut h, &s, &y, sy, &mut hy);
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
    }

    let converged = norm(&g) <= settings.grad_tol;
    if converged {
        termination = Termination::GradientTolerance;
    }
    Ok(OptimResult {
        params: x,
        loss: f,
        iterations: used,
        converged,
        termination,
    })
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn mat_vec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&a[i * n..(i + 1) * n], x);
    }
}

/// H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T, expanded so that only
/// H y is needed.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64, hy: &mut [f64]) {
    let n = s.len();
    let rho = 1.0 / sy;
    mat_vec(h, y, hy);
    let yhy = dot(y, hy);
    let coef = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// First-order warm-up followed by BFGS refinement.
pub fn two_stage_minimize<O: Objective + ?Sized>(
    obj: &O,
    init: &[f64],
    cfg: &OptimConfig,
) -> Result<OptimResult, OptimError> {
    let first = minimize_first_order(obj, init, cfg.t1_iters, cfg.lr_first)?;
    let second = minimize_bfgs(obj, &first.params, cfg.t2_iters, &BfgsSettings::from(cfg))?;
    Ok(OptimResult {
        iterations: first.iterations + second.iterations,
        ..second
    })
}

/// The low-rate first-order pass run on pool candidates after the search.
pub fn fine_tune<O: Objective + ?Sized>(
    obj: &O,
    init: &[f64],
    cfg: &OptimConfig,
) -> Result<OptimResult, OptimError> {
    minimize_first_order(obj, init, cfg.t3_iters, cfg.lr_finetune)
}

//! SIR, SEIR and SEIRD vector fields and an explicit-Euler trajectory generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, Trajectory, TrajectoryDataset};
use crate::forecast::VectorField;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EpiError {
    #[error("rate `{0}` must be finite and nonnegative")]
    NegativeRate(&'static str),
    #[error("population must be positive")]
    NonPositivePopulation,
    #[error("{kind:?} state has {expected} compartments, got {got}")]
    DimensionMismatch {
        kind: ModelKind,
        expected: usize,
        got: usize,
    },
    #[error("invalid generator options: {0}")]
    Options(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sir,
    Seir,
    Seird,
}

impl ModelKind {
    pub fn dim(self) -> usize {
        match self {
            ModelKind::Sir => 3,
            ModelKind::Seir => 4,
            ModelKind::Seird => 5,
        }
    }

    pub fn var_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::Sir => &["S", "I", "R"],
            ModelKind::Seir => &["S", "E", "I", "R"],
            ModelKind::Seird => &["S", "E", "I", "R", "D"],
        }
    }
}

/// Rate constants. `nu_rate` is the immunity-acquisition (vaccination) rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpiParams {
    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
    pub sigma: f64,
    pub nu_rate: f64,
    pub delta: f64,
    pub n_pop: f64,
}

impl EpiParams {
    pub fn new(
        beta: f64,
        gamma: f64,
        mu: f64,
        sigma: f64,
        nu_rate: f64,
        delta: f64,
        n_pop: f64,
    ) -> Result<Self, EpiError> {
        let p = Self {
            beta,
            gamma,
            mu,
            sigma,
            nu_rate,
            delta,
            n_pop,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), EpiError> {
        for (name, v) in [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("mu", self.mu),
            ("sigma", self.sigma),
            ("nu_rate", self.nu_rate),
            ("delta", self.delta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(EpiError::NegativeRate(name));
            }
        }
        if !(self.n_pop > 0.0 && self.n_pop.is_finite()) {
            return Err(EpiError::NonPositivePopulation);
        }
        Ok(())
    }

    /// Rates of the synthetic experiments; the progression rate depends on
    /// the model (0.6 for SEIR, 0.5 for SEIRD).
    pub fn experiment_defaults(kind: ModelKind) -> Self {
        Self {
            beta: 0.9,
            gamma: 0.2,
            mu: 0.3,
            sigma: match kind {
                ModelKind::Seird => 0.5,
                _ => 0.6,
            },
            nu_rate: 0.2,
            delta: 0.05,
            n_pop: 1.0,
        }
    }
}

/// Right-hand side of the chosen model, written into `out`.
pub fn vector_field_into(
    kind: ModelKind,
    p: &EpiParams,
    x: &[f64],
    out: &mut [f64],
) -> Result<(), EpiError> {
    let d = kind.dim();
    if x.len() != d || out.len() != d {
        return Err(EpiError::DimensionMismatch {
            kind,
            expected: d,
            got: x.len(),
        });
    }
    let n = p.n_pop;
    match kind {
        ModelKind::Sir => {
            let (s, i, r) = (x[0], x[1], x[2]);
            let infection = p.beta * s * i / n;
            out[0] = p.mu * (n - s) - infection;
            out[1] = infection - (p.mu + p.gamma) * i;
            out[2] = p.gamma * i - p.mu * r;
        }
        ModelKind::Seir => {
            let (s, e, i, r) = (x[0], x[1], x[2], x[3]);
            let infection = p.beta * s * i / n;
            out[0] = p.mu * (n - s) - infection - p.nu_rate * s;
            out[1] = infection - (p.mu + p.sigma) * e;
            out[2] = p.sigma * e - (p.mu + p.gamma) * i;
            out[3] = p.gamma * i - p.mu * r + p.nu_rate * s;
        }
        ModelKind::Seird => {
            let (s, e, i) = (x[0], x[1], x[2]);
            let infection = p.beta * s * i / n;
            out[0] = -infection;
            out[1] = infection - p.sigma * e;
            out[2] = p.sigma * e - (p.gamma + p.delta) * i;
            out[3] = p.gamma * i;
            out[4] = p.delta * i;
        }
    }
    Ok(())
}

pub fn vector_field(kind: ModelKind, p: &EpiParams, x: &[f64]) -> Result<Vec<f64>, EpiError> {
    let mut out = vec![0.0; kind.dim()];
    vector_field_into(kind, p, x, &mut out)?;
    Ok(out)
}

/// A ground-truth model usable wherever a learned system is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpiSystem {
    pub kind: ModelKind,
    pub params: EpiParams,
}

impl VectorField for EpiSystem {
    fn dim(&self) -> usize {
        self.kind.dim()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        vector_field_into(self.kind, &self.params, x, out).is_ok()
            && out.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub n_trajectories: usize,
    pub steps: usize,
    pub dt: f64,
    /// Rescale each initial state to sum to one.
    pub normalize_initial: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            n_trajectories: 200,
            steps: 250,
            dt: 0.2,
            normalize_initial: true,
        }
    }
}

/// Draws initial states i.i.d. from U(0,1) per compartment and integrates with
/// plain explicit Euler (no clamping). Trajectory `k` uses RNG stream `k` of
/// `seed`, so the output does not depend on scheduling.
pub fn generate_trajectories(
    kind: ModelKind,
    params: &EpiParams,
    opts: &GenerateOptions,
    seed: u64,
) -> Result<TrajectoryDataset, EpiError> {
    params.validate()?;
    if opts.n_trajectories == 0 || opts.steps == 0 {
        return Err(EpiError::Options(
            "n_trajectories and steps must be at least 1".into(),
        ));
    }
    if !(opts.dt > 0.0 && opts.dt.is_finite()) {
        return Err(EpiError::Options(format!(
            "dt must be positive, got {}",
            opts.dt
        )));
    }
    let d = kind.dim();
    let trajectories: Vec<Trajectory> = (0..opts.n_trajectories)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut x: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
            if opts.normalize_initial {
                let total: f64 = x.iter().sum();
                x.iter_mut().for_each(|v| *v /= total);
            }
            euler_path(kind, params, &x, opts.steps, opts.dt)
        })
        .collect();
    let names = kind.var_names().iter().map(|s| s.to_string()).collect();
    Ok(TrajectoryDataset::new(trajectories, opts.dt, names)?)
}

/// `steps` explicit Euler steps from `x0`, returning `steps + 1` rows.
pub fn euler_path(
    kind: ModelKind,
    params: &EpiParams,
    x0: &[f64],
    steps: usize,
    dt: f64,
) -> Trajectory {
    let d = kind.dim();
    let mut values = Vec::with_capacity((steps + 1) * d);
    values.extend_from_slice(x0);
    let mut f = vec![0.0; d];
    for s in 0..steps {
        let cur = values[s * d..(s + 1) * d].to_vec();
        vector_field_into(kind, params, &cur, &mut f).expect("dimension fixed by kind");
        values.extend(cur.iter().zip(&f).map(|(x, fx)| x + dt * fx));
    }
    Trajectory::new(values, d)
}

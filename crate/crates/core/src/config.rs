//! JSON run configuration.
//!
//! ```json
//! {
//!   "mode": "synthetic",
//!   "seed": 7,
//!   "output_dir": "out/sir",
//!   "synthetic": { "model": "sir", "n_trajectories": 40, "train_fraction": 0.5 },
//!   "search": { "epochs": 100, "batch_size": 10 }
//! }
//! ```
//!
//! Unknown keys are rejected everywhere; omitted keys take their defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::epi::{EpiParams, GenerateOptions, ModelKind};
use crate::io::Normalization;
use crate::search::{SearchConfig, SearchError};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{path}: {message}")]
pub struct ConfigError {
    /// Dotted location of the offending field, `.` for the document itself.
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Synthetic,
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub model: ModelKind,
    pub n_trajectories: usize,
    pub steps: usize,
    pub dt: f64,
    /// Share of trajectories used for training; the rest are test data.
    pub train_fraction: f64,
    pub normalize_initial: bool,
    /// Rate constants; the model's experiment defaults when absent.
    pub params: Option<EpiParams>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let g = GenerateOptions::default();
        Self {
            model: ModelKind::Sir,
            n_trajectories: g.n_trajectories,
            steps: g.steps,
            dt: g.dt,
            train_fraction: 0.5,
            normalize_initial: g.normalize_initial,
            params: None,
        }
    }
}

impl SyntheticConfig {
    pub fn params(&self) -> EpiParams {
        self.params
            .unwrap_or_else(|| EpiParams::experiment_defaults(self.model))
    }

    pub fn generate_options(&self) -> GenerateOptions {
        GenerateOptions {
            n_trajectories: self.n_trajectories,
            steps: self.steps,
            dt: self.dt,
            normalize_initial: self.normalize_initial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealConfig {
    /// Series CSV; relative paths are resolved against the config file.
    pub input: PathBuf,
    #[serde(default = "default_columns")]
    pub columns: Vec<String>,
    /// Leading rows used for fitting; forecasting starts from the last of them.
    #[serde(default = "default_train_days")]
    pub train_days: usize,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default = "default_real_dt")]
    pub dt: f64,
}

fn default_columns() -> Vec<String> {
    ["Q", "D", "R"].iter().map(|s| s.to_string()).collect()
}

fn default_train_days() -> usize {
    85
}

fn default_real_dt() -> f64 {
    1.0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real: Option<RealConfig>,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// Parses and validates; type errors carry the JSON path of the field.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::at(path, e.into_inner().to_string())
        })?;
        if cfg.mode == Mode::Synthetic && cfg.synthetic.is_none() {
            cfg.synthetic = Some(SyntheticConfig::default());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and resolves a relative `real.input` against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::at(".", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let (Some(real), Some(dir)) = (cfg.real.as_mut(), path.parent()) {
            if real.input.is_relative() {
                real.input = dir.join(&real.input);
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The search settings with the run seed applied.
    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            seed: self.seed,
            ..self.search.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.mode {
            Mode::Synthetic => {
                if self.real.is_some() {
                    return Err(ConfigError::at("real", "not used in synthetic mode"));
                }
                let s = self
                    .synthetic
                    .as_ref()
                    .ok_or_else(|| ConfigError::at("synthetic", "required in synthetic mode"))?;
                validate_synthetic(s)?;
                check_templates(&self.search, s.model.dim())?;
            }
            Mode::Real => {
                if self.synthetic.is_some() {
                    return Err(ConfigError::at("synthetic", "not used in real mode"));
                }
                let r = self
                    .real
                    .as_ref()
                    .ok_or_else(|| ConfigError::at("real", "required in real mode"))?;
                validate_real(r)?;
                check_templates(&self.search, r.columns.len())?;
            }
        }
        self.search.check().map_err(|e| match e {
            SearchError::Config { field, message } => {
                ConfigError::at(format!("search.{field}"), message)
            }
            other => ConfigError::at("search", other.to_string()),
        })?;
        if self.output_dir.as_os_str().is_empty() {
            return Err(ConfigError::at("output_dir", "must not be empty"));
        }
        Ok(())
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::at(
            path,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn validate_synthetic(s: &SyntheticConfig) -> Result<(), ConfigError> {
    if s.n_trajectories < 2 {
        return Err(ConfigError::at(
            "synthetic.n_trajectories",
            "at least 2 are needed for a train/test split",
        ));
    }
    if s.steps == 0 {
        return Err(ConfigError::at("synthetic.steps", "must be at least 1"));
    }
    positive("synthetic.dt", s.dt)?;
    if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
        return Err(ConfigError::at(
            "synthetic.train_fraction",
            "must lie in (0, 1)",
        ));
    }
    if let Some(p) = &s.params {
        for (name, v) in [
            ("beta", p.beta),
            ("gamma", p.gamma),
            ("mu", p.mu),
            ("sigma", p.sigma),
            ("nu_rate", p.nu_rate),
            ("delta", p.delta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::at(
                    format!("synthetic.params.{name}"),
                    format!("must be nonnegative and finite, got {v}"),
                ));
            }
        }
        positive("synthetic.params.n_pop", p.n_pop)?;
    }
    Ok(())
}

fn validate_real(r: &RealConfig) -> Result<(), ConfigError> {
    if r.input.as_os_str().is_empty() {
        return Err(ConfigError::at("real.input", "must not be empty"));
    }
    if r.columns.is_empty() {
        return Err(ConfigError::at(
            "real.columns",
            "at least one column is required",
        ));
    }
    for (i, c) in r.columns.iter().enumerate() {
        if c.is_empty() || r.columns[..i].contains(c) {
            return Err(ConfigError::at(
                format!("real.columns[{i}]"),
                format!("empty or duplicate column name {c:?}"),
            ));
        }
    }
    if r.train_days < 2 {
        return Err(ConfigError::at("real.train_days", "must be at least 2"));
    }
    if let Normalization::ByConstant { c } = r.normalization {
        positive("real.normalization.c", c)?;
    }
    positive("real.dt", r.dt)
}

fn check_templates(search: &SearchConfig, dim: usize) -> Result<(), ConfigError> {
    match &search.component_templates {
        Some(t) if t.len() != dim => Err(ConfigError::at(
            "search.component_templates",
            format!("{} entries for {dim} components", t.len()),
        )),
        _ => Ok(()),
    }
}

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("dataset contains no trajectories")]
    Empty,
    #[error("trajectory {index} has {rows} rows; at least 2 are required")]
    TooFewRows { index: usize, rows: usize },
    #[error("trajectory {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in trajectory {index}, row {row}, column {col}")]
    NonFinite {
        index: usize,
        row: usize,
        col: usize,
    },
    #[error("time step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("{names} variable names for dimension {dim}")]
    NameCount { names: usize, dim: usize },
    #[error("cannot split: {0}")]
    Split(String),
}

/// One sampled trajectory: `len()` rows of `dim()` state values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    values: Vec<f64>,
    dim: usize,
}

impl Trajectory {
    pub fn new(values: Vec<f64>, dim: usize) -> Self {
        assert!(
            dim > 0 && values.len().is_multiple_of(dim),
            "ragged trajectory buffer"
        );
        Self { values, dim }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(1, Vec::len);
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(values, dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of rows (time points).
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of consecutive row pairs.
    pub fn steps(&self) -> usize {
        self.len().saturating_sub(1)
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.dim..(s + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Rows `range` as a new trajectory.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self::new(
            self.values[range.start * self.dim..range.end * self.dim].to_vec(),
            self.dim,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Full,
    Train,
    Test,
}

/// Time-indexed state samples sharing one dimension and step size.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    trajectories: Vec<Trajectory>,
    dt: f64,
    var_names: Vec<String>,
    split: Split,
}

impl TrajectoryDataset {
    pub fn new(
        trajectories: Vec<Trajectory>,
        dt: f64,
        var_names: Vec<String>,
    ) -> Result<Self, DatasetError> {
        if trajectories.is_empty() {
            return Err(DatasetError::Empty);
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DatasetError::BadStep(dt));
        }
        let dim = trajectories[0].dim();
        if var_names.len() != dim {
            return Err(DatasetError::NameCount {
                names: var_names.len(),
                dim,
            });
        }
        for (index, t) in trajectories.iter().enumerate() {
            if t.dim() != dim {
                return Err(DatasetError::DimensionMismatch {
                    index,
                    expected: dim,
                    got: t.dim(),
                });
            }
            if t.len() < 2 {
                return Err(DatasetError::TooFewRows {
                    index,
                    rows: t.len(),
                });
            }
            if let Some(pos) = t.values().iter().position(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite {
                    index,
                    row: pos / dim,
                    col: pos % dim,
                });
            }
        }
        Ok(Self {
            trajectories,
            dt,
            var_names,
            split: Split::Full,
        })
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.trajectories[0].dim()
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Total number of consecutive pairs over all trajectories.
    pub fn pair_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::steps).sum()
    }

    /// Applies `f` to every stored value.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        let trajectories = self
            .trajectories
            .iter()
            .map(|t| Trajectory::new(t.values().iter().map(|&v| f(v)).collect(), t.dim()))
            .collect();
        Self {
            trajectories,
            ..self.clone()
        }
    }

    /// Same metadata, different trajectories; skips the validation in [`Self::new`].
    pub(crate) fn replace_trajectories(&self, trajectories: Vec<Trajectory>, split: Split) -> Self {
        Self {
            trajectories,
            dt: self.dt,
            var_names: self.var_names.clone(),
            split,
        }
    }
}

/// Splits whole trajectories: the first `round(fraction * n)` (clamped so both
/// sides are nonempty) go to training, the rest to testing.
pub fn train_test_split(
    data: &TrajectoryDataset,
    train_fraction: f64,
) -> Result<(TrajectoryDataset, TrajectoryDataset), DatasetError> {
    let n = data.trajectories().len();
    if n < 2 {
        return Err(DatasetError::Split(format!(
            "need at least 2 trajectories, have {n}"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::Split(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let (train, test) = data.trajectories().split_at(n_train);
    Ok((
        data.replace_trajectories(train.to_vec(), Split::Train),
        data.replace_trajectories(test.to_vec(), Split::Test),
    ))
}

/// Splits a single trajectory in time: rows `0..train_rows` for training and
/// rows `train_rows..` for testing.
pub fn split_by_steps(
    data: &TrajectoryDataset,
    train_rows: usize,
) -> Result<(TrajectoryDataset, TrajectoryDataset), DatasetError> {
    if data.trajectories().len() != 1 {
        return Err(DatasetError::Split(
            "time split expects exactly one trajectory".into(),
        ));
    }
    let t = &data.trajectories()[0];
    if train_rows < 2 || train_rows >= t.len() {
        return Err(DatasetError::Split(format!(
            "train window of {train_rows} rows does not fit a series of {} rows",
            t.len()
        )));
    }
    Ok((
        data.replace_trajectories(vec![t.slice(0..train_rows)], Split::Train),
        data.replace_trajectories(vec![t.slice(train_rows..t.len())], Split::Test),
    ))
}

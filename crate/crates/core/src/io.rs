//! CSV formats for trajectory data and series normalization.
//!
//! Two layouts are recognised by their header:
//!
//! * trajectory files: `trajectory_id,step,<var1>,...,<vard>`, one row per
//!   sample, rows of a trajectory contiguous and in step order;
//! * series files: `date,<var1>,...` with ISO-8601 dates, a single trajectory
//!   whose time index is the row number.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, Trajectory, TrajectoryDataset};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("file is empty or has no header")]
    EmptyFile,
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}, column `{column}`: cannot parse {value:?} as a finite number")]
    NonNumericCell {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("only {rows} data row(s); at least 2 are required")]
    TooFewRows { rows: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("scale must be positive and finite, got {0}")]
    BadScale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvLayout {
    Trajectories,
    Series,
}

const TRAJ_KEY: &str = "trajectory_id";
const STEP_KEY: &str = "step";
const DATE_KEY: &str = "date";

/// Reads a trajectory or series file. `columns` selects and orders the state
/// variables; when empty, every non-key column is used in file order. `dt` is
/// the time between consecutive rows.
pub fn load_csv(path: &Path, columns: &[String], dt: f64) -> Result<TrajectoryDataset, IoError> {
    let file = File::open(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, columns, dt)
}

pub fn read_csv<R: Read>(
    reader: R,
    columns: &[String],
    dt: f64,
) -> Result<TrajectoryDataset, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.iter().all(String::is_empty) {
        return Err(IoError::EmptyFile);
    }
    let layout = if header.first().map(String::as_str) == Some(TRAJ_KEY) {
        if header.get(1).map(String::as_str) != Some(STEP_KEY) {
            return Err(IoError::MissingColumn(STEP_KEY.into()));
        }
        CsvLayout::Trajectories
    } else if header.first().map(String::as_str) == Some(DATE_KEY) {
        CsvLayout::Series
    } else {
        return Err(IoError::MissingColumn(format!(
            "{TRAJ_KEY}` or `{DATE_KEY}"
        )));
    };
    let keys = match layout {
        CsvLayout::Trajectories => 2,
        CsvLayout::Series => 1,
    };

    let names: Vec<String> = if columns.is_empty() {
        header[keys..].to_vec()
    } else {
        columns.to_vec()
    };
    if names.is_empty() {
        return Err(IoError::MissingColumn("<state variable>".into()));
    }
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            header[keys..]
                .iter()
                .position(|h| h == n)
                .map(|p| p + keys)
                .ok_or_else(|| IoError::MissingColumn(n.clone()))
        })
        .collect::<Result<_, _>>()?;

    let d = names.len();
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut current: Vec<f64> = Vec::new();
    let mut current_id: Option<String> = None;
    let mut seen = std::collections::HashSet::new();
    let mut rows = 0usize;

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(IoError::Malformed {
                line,
                message: format!("{} fields, header has {}", record.len(), header.len()),
            });
        }
        match layout {
            CsvLayout::Trajectories => {
                let id = record[0].trim();
                let step: usize = record[1].trim().parse().map_err(|_| IoError::Malformed {
                    line,
                    message: format!("step {:?} is not a nonnegative integer", &record[1]),
                })?;
                if current_id.as_deref() != Some(id) {
                    if !seen.insert(id.to_string()) {
                        return Err(IoError::Malformed {
                            line,
                            message: format!("rows of trajectory {id:?} are not contiguous"),
                        });
                    }
                    if step != 0 {
                        return Err(IoError::Malformed {
                            line,
                            message: format!("trajectory {id:?} starts at step {step}, expected 0"),
                        });
                    }
                    if current_id.replace(id.to_string()).is_some() {
                        trajectories.push(Trajectory::new(std::mem::take(&mut current), d));
                    }
                } else if step != current.len() / d {
                    return Err(IoError::Malformed {
                        line,
                        message: format!(
                            "step {step} out of order, expected {}",
                            current.len() / d
                        ),
                    });
                }
            }
            CsvLayout::Series => {
                let date = record[0].trim();
                if !is_iso_date(date) {
                    return Err(IoError::Malformed {
                        line,
                        message: format!("date {date:?} is not YYYY-MM-DD"),
                    });
                }
            }
        }
        for (&i, name) in idx.iter().zip(&names) {
            let raw = record[i].trim();
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => current.push(v),
                _ => {
                    return Err(IoError::NonNumericCell {
                        line,
                        column: name.clone(),
                        value: raw.to_string(),
                    })
                }
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(IoError::EmptyFile);
    }
    if !current.is_empty() {
        trajectories.push(Trajectory::new(current, d));
    }
    if let Some(short) = trajectories.iter().find(|t| t.len() < 2) {
        return Err(IoError::TooFewRows { rows: short.len() });
    }
    Ok(TrajectoryDataset::new(trajectories, dt, names)?)
}

fn is_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    if b.len() < 10 || b[4] != b'-' || b[7] != b'-' {
        return false;
    }
    let digits = |r: std::ops::Range<usize>| b[r].iter().all(u8::is_ascii_digit);
    if !(digits(0..4) && digits(5..7) && digits(8..10)) {
        return false;
    }
    let month: u32 = s[5..7].parse().unwrap_or(0);
    let day: u32 = s[8..10].parse().unwrap_or(0);
    // anything after the date (a time part) is accepted as-is
    (1..=12).contains(&month)
        && (1..=31).contains(&day)
        && (b.len() == 10 || b[10] == b'T' || b[10] == b' ')
}

/// Writes `data` in the trajectory layout with shortest round-trip float
/// formatting, so a reload reproduces every value exactly.
pub fn save_csv(path: &Path, data: &TrajectoryDataset) -> Result<(), IoError> {
    let file = File::create(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })?;
    write_csv(file, data)
}

pub fn write_csv<W: Write>(writer: W, data: &TrajectoryDataset) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![TRAJ_KEY.to_string(), STEP_KEY.to_string()];
    header.extend(data.var_names().iter().cloned());
    w.write_record(&header)?;
    for (k, t) in data.trajectories().iter().enumerate() {
        for (s, row) in t.rows().enumerate() {
            let mut rec = vec![k.to_string(), s.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|source| IoError::File {
        path: "<output>".into(),
        source,
    })?;
    Ok(())
}

/// Writes a `step_index,mse` table; `first_step` is the index of `mse[0]`.
pub fn write_mse_csv<W: Write>(writer: W, mse: &[f64], first_step: usize) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["step_index", "mse"])?;
    for (i, v) in mse.iter().enumerate() {
        w.write_record([(first_step + i).to_string(), v.to_string()])?;
    }
    w.flush().map_err(|source| IoError::File {
        path: "<output>".into(),
        source,
    })?;
    Ok(())
}

/// How raw values are scaled before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode", deny_unknown_fields)]
pub enum Normalization {
    None,
    /// Divide every value by `c`.
    ByConstant {
        c: f64,
    },
    /// Divide every value by the largest row total over the whole dataset.
    #[default]
    ByMaxTotal,
}

/// The divisor that was applied, so results can be mapped back to raw units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleRecord {
    pub normalization: Normalization,
    pub scale: f64,
}

impl ScaleRecord {
    pub fn identity() -> Self {
        Self {
            normalization: Normalization::None,
            scale: 1.0,
        }
    }

    pub fn to_raw(&self, v: f64) -> f64 {
        v * self.scale
    }
}

pub fn normalize_series(
    data: &TrajectoryDataset,
    mode: Normalization,
) -> Result<(TrajectoryDataset, ScaleRecord), IoError> {
    let scale = match mode {
        Normalization::None => 1.0,
        Normalization::ByConstant { c } => c,
        Normalization::ByMaxTotal => data
            .trajectories()
            .iter()
            .flat_map(|t| t.rows().map(|r| r.iter().sum::<f64>()))
            .fold(f64::NEG_INFINITY, f64::max),
    };
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(IoError::BadScale(scale));
    }
    let record = ScaleRecord {
        normalization: mode,
        scale,
    };
    let out = if scale == 1.0 {
        data.clone()
    } else {
        data.map_values(|v| v / scale)
    };
    Ok((out, record))
}

pub fn denormalize(data: &TrajectoryDataset, record: &ScaleRecord) -> TrajectoryDataset {
    data.map_values(|v| record.to_raw(v))
}

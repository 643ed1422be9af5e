//! Per-step training metrics and their CSV persistence.
//!
//! One [`TrainMetrics`] row is recorded for every configured step, including
//! skipped ones (empty distilled batch), so stagnation stays visible in the
//! curves instead of silently compressing the x-axis. The CSV column order is
//! part of the crate's external interface — frozen, documented in the README,
//! and validated on read, with the first offending header named when a file
//! does not match. Floating-point fields are written in shortest round-trip
//! notation, so parse → re-emit reproduces a metrics file byte for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The frozen CSV schema: column order is stable across releases.
pub const METRICS_COLUMNS: [&str; 13] = [
    "step",
    "skipped",
    "reward_accuracy",
    "entropy",
    "mean_response_length",
    "clip_fraction",
    "effective_set_fraction",
    "k_prime",
    "surrogate_loss",
    "kl_penalty",
    "total_loss",
    "tau",
    "beta",
];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("failed to access metrics file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error(
        "unknown metrics schema in {path}: column {position} is '{found}', expected '{expected}'"
    )]
    UnknownColumn {
        path: String,
        position: usize,
        found: String,
        expected: String,
    },
    #[error("unknown metrics schema in {path}: {found} columns, expected {expected}")]
    ColumnCount {
        path: String,
        found: usize,
        expected: usize,
    },
    #[error("metrics row for step {step} violates invariants: {reason}")]
    InvalidRow { step: usize, reason: String },
}

pub type MetricsResult<T> = Result<T, MetricsError>;

/// One training step's observables. Field order defines the CSV column
/// order; see [`METRICS_COLUMNS`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    /// Stage-local step index, 0-based.
    pub step: usize,
    /// True when the distilled batch was empty and no update ran.
    pub skipped: bool,
    /// Fraction of this step's rollouts with full task reward.
    pub reward_accuracy: f64,
    /// Mean per-token policy entropy over the step's visited contexts.
    pub entropy: f64,
    /// Mean response length in tokens (EOS included, prompt excluded).
    pub mean_response_length: f64,
    /// Fraction of surrogate terms where clipping pessimistically bound;
    /// 0 on skipped steps.
    pub clip_fraction: f64,
    /// `|E| / N`: share of the batch that survived the advantage filter.
    pub effective_set_fraction: f64,
    /// Number of rollouts selected for the update.
    pub k_prime: usize,
    /// Clipped surrogate loss; 0 on skipped steps.
    pub surrogate_loss: f64,
    /// k3 KL penalty value; 0 when disabled or skipped.
    pub kl_penalty: f64,
    /// Composed step loss; 0 on skipped steps.
    pub total_loss: f64,
    /// PAD temperature in force this step.
    pub tau: f64,
    /// Entropy coefficient in force this step.
    pub beta: f64,
}

impl TrainMetrics {
    /// Checks the row invariants: everything finite, fractions in [0, 1].
    pub fn validate(&self) -> MetricsResult<()> {
        let finite = [
            ("reward_accuracy", self.reward_accuracy),
            ("entropy", self.entropy),
            ("mean_response_length", self.mean_response_length),
            ("clip_fraction", self.clip_fraction),
            ("effective_set_fraction", self.effective_set_fraction),
            ("surrogate_loss", self.surrogate_loss),
            ("kl_penalty", self.kl_penalty),
            ("total_loss", self.total_loss),
            ("tau", self.tau),
            ("beta", self.beta),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(MetricsError::InvalidRow {
                    step: self.step,
                    reason: format!("{name} is not finite ({value})"),
                });
            }
        }
        let fractions = [
            ("reward_accuracy", self.reward_accuracy),
            ("clip_fraction", self.clip_fraction),
            ("effective_set_fraction", self.effective_set_fraction),
        ];
        for (name, value) in fractions {
            if !(0.0..=1.0).contains(&value) {
                return Err(MetricsError::InvalidRow {
                    step: self.step,
                    reason: format!("{name} = {value} outside [0, 1]"),
                });
            }
        }
        Ok(())
    }
}

/// Writes metrics rows as CSV with the frozen header.
pub fn write_metrics_csv(path: &Path, rows: &[TrainMetrics]) -> MetricsResult<()> {
    let io_err = |source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    for row in rows {
        writer.serialize(row).map_err(|source| MetricsError::Csv {
            path: path.display().to_string(),
            source,
        })?;
    }
    writer.flush().map_err(io_err)?;
    Ok(())
}

/// Reads a metrics CSV, rejecting files whose header deviates from
/// [`METRICS_COLUMNS`] — the first offending column is named — and rows that
/// violate the metric invariants.
pub fn read_metrics_csv(path: &Path) -> MetricsResult<Vec<TrainMetrics>> {
    let path_str = path.display().to_string();
    let file = File::open(path).map_err(|source| MetricsError::Io {
        path: path_str.clone(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let headers = reader.headers().map_err(|source| MetricsError::Csv {
        path: path_str.clone(),
        source,
    })?;
    for (position, expected) in METRICS_COLUMNS.iter().enumerate() {
        match headers.get(position) {
            Some(found) if found == *expected => {}
            Some(found) => {
                return Err(MetricsError::UnknownColumn {
                    path: path_str,
                    position,
                    found: found.to_string(),
                    expected: (*expected).to_string(),
                })
            }
            None => {
                return Err(MetricsError::ColumnCount {
                    path: path_str,
                    found: headers.len(),
                    expected: METRICS_COLUMNS.len(),
                })
            }
        }
    }
    if headers.len() != METRICS_COLUMNS.len() {
        return Err(MetricsError::ColumnCount {
            path: path_str,
            found: headers.len(),
            expected: METRICS_COLUMNS.len(),
        });
    }
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        let row: TrainMetrics = record.map_err(|source| MetricsError::Csv {
            path: path_str.clone(),
            source,
        })?;
        row.validate()?;
        rows.push(row);
    }
    Ok(rows)
}

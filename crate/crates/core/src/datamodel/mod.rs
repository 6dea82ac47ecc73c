//! Domain types, event-log ingestion, and the file-backed summary store.
//!
//! Raw per-user, per-day records (`ExposureEvent`, `MetricEvent`) are ingested
//! into an immutable [`IngestedLog`] that the analysis modules consume.
//! Aggregates are carried as [`RangeSummary`] values keyed by
//! (experiment, variant, metric, date range) and can be persisted losslessly
//! through [`SummaryStore`].

mod assign;
mod config;
mod events;
mod log;
mod store;

pub use assign::{assign_variant, bucket_fraction};
pub use config::{ExperimentConfig, VariantAllocation};
pub use events::{parse_event_line, read_events, write_events, Event, ExposureEvent, MetricEvent};
pub use log::{ingest, IngestedLog, MetricSeries, UserLog};
pub use store::SummaryStore;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors surfaced by ingestion, validation, and store I/O.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("unknown experiment id '{found}' (expected '{expected}')")]
    UnknownExperiment { found: String, expected: String },
    #[error("unknown variant '{variant}' for user '{user_id}'")]
    UnknownVariant { variant: String, user_id: String },
    #[error("conflicting variants for user '{user_id}': '{first}' vs '{second}'")]
    VariantConflict {
        user_id: String,
        first: String,
        second: String,
    },
    #[error("day {day} outside experiment duration 1..={duration}")]
    DayOutOfRange { day: u32, duration: u32 },
    #[error("non-finite metric value for user '{user_id}' metric '{metric_id}'")]
    NonFiniteValue { user_id: String, metric_id: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid range: [{start},{end}]")]
    InvalidRange { start: u32, end: u32 },
    #[error("duplicate store key: {0}")]
    DuplicateKey(String),
    #[error("store schema mismatch: found version {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("corrupt store file: {0}")]
    CorruptStore(String),
}

/// Inclusive day range `[start, end]`, 1-based experiment-relative days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DayRange {
    pub start: u32,
    pub end: u32,
}

impl DayRange {
    pub fn new(start: u32, end: u32) -> Result<Self, DataError> {
        if start == 0 || start > end {
            return Err(DataError::InvalidRange { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn single(day: u32) -> Result<Self, DataError> {
        Self::new(day, day)
    }

    pub fn contains(&self, day: u32) -> bool {
        day >= self.start && day <= self.end
    }

    pub fn len_days(&self) -> u32 {
        self.end - self.start + 1
    }
}

impl std::fmt::Display for DayRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{},{}]", self.start, self.end)
    }
}

/// Per (experiment, variant, metric, date-range) counts and sums.
///
/// `n` is the analysis population size, `sum` the total of per-user metric
/// totals, `sum_sq` the total of squared per-user totals. Users in the
/// population without any metric event contribute zero to both sums but are
/// counted in `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeSummary {
    pub experiment_id: String,
    pub variant: String,
    pub metric_id: String,
    pub range: DayRange,
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl RangeSummary {
    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    /// Unbiased sample variance from the carried sums:
    /// `(sum_sq - sum^2/n) / (n - 1)`.
    pub fn sample_variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let raw = (self.sum_sq - self.sum * self.sum / n) / (n - 1.0);
        // Cancellation can leave a tiny negative residue for constant data.
        raw.max(0.0)
    }

    /// Checks the Cauchy-Schwarz relation `sum_sq >= sum^2 / n` (within float
    /// tolerance) that any honestly aggregated summary must satisfy.
    pub fn is_consistent(&self) -> bool {
        if self.n == 0 {
            return self.sum == 0.0 && self.sum_sq == 0.0;
        }
        let lower = self.sum * self.sum / self.n as f64;
        self.sum_sq >= lower - 1e-9 * lower.abs().max(1.0)
    }
}

//! Crate-wide error type.
//!
//! Expected, recoverable conditions (an analysis window excluded for a data
//! gap, an episode with no speed transition) get their own variants so that
//! callers can branch on them; everything else carries enough context to be
//! printed as a one-line diagnosis.

use crate::types::{MinuteRange, MinuteStamp};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Why an analysis window was dropped before estimation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WindowExclusion {
    /// A run of missing minutes longer than the configured maximum.
    GapTooLong {
        at: MinuteStamp,
        len: usize,
        max_gap: usize,
    },
    /// A missing minute at the window edge, where interpolation has no
    /// bracketing value.
    BoundaryGap { at: MinuteStamp },
}

impl std::fmt::Display for WindowExclusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WindowExclusion::GapTooLong { at, len, max_gap } => {
                write!(
                    f,
                    "gap of {len} missing minutes at {at} exceeds max_gap {max_gap}"
                )
            }
            WindowExclusion::BoundaryGap { at } => {
                write!(f, "missing value at window boundary {at}")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("config key {key}: {reason}")]
    Config { key: String, reason: String },

    #[error("{}:{line}: {msg}", path.display())]
    Csv {
        path: std::path::PathBuf,
        line: u64,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("segment {segment_id}: series not defined over {range} (missing {at})")]
    Coverage {
        segment_id: String,
        range: MinuteRange,
        at: MinuteStamp,
    },

    #[error("segment {segment_id}: window excluded: {reason}")]
    ExcludedWindow {
        segment_id: String,
        reason: WindowExclusion,
    },

    #[error("segment {segment_id}: no speed transition in ({start}, {end})")]
    NoTransition {
        segment_id: String,
        start: MinuteStamp,
        end: MinuteStamp,
    },

    #[error("segment {segment_id}: {phase} phase is {len} min, shorter than minimum {min} min")]
    PhaseTooShort {
        segment_id: String,
        phase: &'static str,
        len: i64,
        min: i64,
    },

    #[error("correlation undefined at every offset in [{lb}, {ub}]")]
    CorrelationUndefined { lb: i64, ub: i64 },

    #[error("no episode reports to summarize")]
    EmptyReport,

    #[error("invalid speed series for {segment_id}: {reason}")]
    InvalidSeries { segment_id: String, reason: String },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

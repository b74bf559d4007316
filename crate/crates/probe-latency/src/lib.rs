//! Latency measurement for probe-vehicle speed feeds.
//!
//! Commercial probe feeds report a segment's speed some minutes after the
//! traffic actually changed. This crate quantifies that delay against a
//! ground-truth reference built from roadside re-identification (paired
//! Bluetooth sightings of the same device at both ends of a segment).
//!
//! The pipeline, stage by stage:
//!
//! 1. [`ingest`]: pair device sightings into segment travel times and label
//!    each trip with its arrival minute.
//! 2. [`series`]: filter outliers per minute, gate thin or noisy intervals,
//!    and aggregate survivors into a space-mean speed series; conflate
//!    per-piece probe feeds onto the same segments.
//! 3. [`smoothing`]: fill short gaps by linear interpolation and smooth both
//!    series with a zero-phase weighted moving average, so smoothing itself
//!    cannot shift the very timing being measured.
//! 4. [`latency`]: slide the probe series over the reference by whole
//!    minutes and score each offset by average and squared speed difference
//!    and by correlation; the latency estimate combines the three winners.
//! 5. [`episode`]: run the estimator over congestion episodes split at the
//!    speed trough into slowdown and recovery phases, then aggregate into
//!    summary tables and a latency distribution.
//! 6. [`synthetic`]: generate reference/probe pairs with known injected
//!    delays for end-to-end validation.
//!
//! Per-segment and per-episode work fans out across a thread pool when the
//! `parallel` feature (on by default) is enabled; results are reduced in
//! input order, so outputs are identical with and without it.

pub mod config;
pub mod csvio;
pub mod episode;
pub mod error;
pub mod exec;
pub mod ingest;
pub mod latency;
pub mod series;
pub mod smoothing;
pub mod synthetic;
pub mod types;

pub use config::PipelineConfig;
pub use episode::{
    analyze_episode, detect_episodes, find_transition, run_episode, run_episodes, summarize,
    AnalysisSettings, Episode, EpisodeLatencyReport, LatencyDistribution, Summary,
};
pub use error::{Error, Result};
pub use latency::{
    estimate_latency, evaluate_objectives, LatencyEstimate, ObjectiveTriple, ShiftBounds,
};
pub use series::{
    build_segment_series, compose_probe_series, FilterSettings, TmcMapping, TmcPiece,
};
pub use smoothing::{smooth_forward, smooth_zero_phase, GapPolicy, SmoothingKernel};
pub use synthetic::{generate_pair, SyntheticPair, SyntheticSpec, SyntheticTruth};
pub use types::{MinuteRange, MinuteStamp, Period, SeriesSource, SpeedSeries};

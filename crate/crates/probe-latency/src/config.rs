//! Pipeline configuration.
//!
//! One TOML file carries every tunable. Unknown keys are rejected so a typo
//! cannot silently fall back to a default, and every validation error names
//! the offending key.

use crate::episode::AnalysisSettings;
use crate::error::{Error, Result};
use crate::latency::ShiftBounds;
use crate::series::FilterSettings;
use crate::smoothing::{GapPolicy, SmoothingKernel, DEFAULT_WEIGHTS};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Input file locations. Paths are taken relative to the config file's
/// directory unless absolute. Each subcommand checks for the files it needs,
/// so a synth-only config can leave all of these out.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputsConfig {
    pub detections: Option<PathBuf>,
    pub stations: Option<PathBuf>,
    pub segments: Option<PathBuf>,
    pub tmc_speeds: Option<PathBuf>,
    pub tmc_map: Option<PathBuf>,
    pub episodes: Option<PathBuf>,
}

impl InputsConfig {
    fn resolve_one(base: &Path, p: &mut Option<PathBuf>) {
        if let Some(path) = p {
            if path.is_relative() {
                *path = base.join(&path);
            }
        }
    }

    fn resolve(&mut self, base: &Path) {
        Self::resolve_one(base, &mut self.detections);
        Self::resolve_one(base, &mut self.stations);
        Self::resolve_one(base, &mut self.segments);
        Self::resolve_one(base, &mut self.tmc_speeds);
        Self::resolve_one(base, &mut self.tmc_map);
        Self::resolve_one(base, &mut self.episodes);
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    /// Minutes of silence before a device's reappearance at a co-location
    /// group counts as a new passage.
    pub passage_gap_min: i64,
    /// Matched trips slower than this are discarded as implausible.
    pub min_speed_mph: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            passage_gap_min: 30,
            min_speed_mph: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilteringConfig {
    /// Per-interval outlier band half-width, in standard deviations.
    pub sigma_k: f64,
    /// Intervals with a coefficient of variation above this are excluded.
    pub cov_max: f64,
    /// Intervals with fewer surviving observations than this are excluded.
    pub min_count: usize,
}

impl Default for FilteringConfig {
    fn default() -> Self {
        FilteringConfig {
            sigma_k: 1.5,
            cov_max: 1.0,
            min_count: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpolationConfig {
    /// Longest run of missing minutes that linear interpolation may fill.
    pub max_gap: usize,
}

impl Default for InterpolationConfig {
    fn default() -> Self {
        InterpolationConfig { max_gap: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingConfig {
    /// Moving-average weights, current sample first; must sum to 1.
    pub weights: Vec<f64>,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            weights: DEFAULT_WEIGHTS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyConfig {
    /// Smallest candidate offset, minutes. Negative values admit a probe
    /// that leads the reference.
    pub lb_min: i64,
    /// Largest candidate offset, minutes.
    pub ub_min: i64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            lb_min: 0,
            ub_min: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodesConfig {
    /// Shortest phase worth estimating, minutes.
    pub min_phase_min: i64,
    /// Free-flow speed used only by advisory episode detection.
    pub freeflow_mph: f64,
    /// Detection threshold as a fraction of free flow.
    pub drop_fraction: f64,
    /// Dips separated by fewer free-flow minutes than this merge into one
    /// detected episode.
    pub merge_gap_min: i64,
}

impl Default for EpisodesConfig {
    fn default() -> Self {
        EpisodesConfig {
            min_phase_min: 10,
            freeflow_mph: 65.0,
            drop_fraction: 0.6,
            merge_gap_min: 30,
        }
    }
}

/// One segment in the generated scenario. The probe map splits it into
/// `pieces` sub-segments with lengths in proportion 1 : 2 : .. : pieces.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSegmentConfig {
    pub segment_id: String,
    pub length_mi: f64,
    #[serde(default = "default_pieces")]
    pub pieces: u32,
}

fn default_pieces() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub freeflow_mph: f64,
    pub trough_mph: f64,
    pub ramp_down_min: u32,
    pub dwell_min: u32,
    pub ramp_up_min: u32,
    /// Length of each generated block of minutes; the trapezoid is centered
    /// inside it.
    pub block_min: u32,
    pub inject_slowdown_min: i64,
    pub inject_recovery_min: i64,
    pub noise_sigma_mph: f64,
    pub seed: u64,
    /// Date of the generated day, `YYYY-MM-DD`.
    pub day: String,
    /// Start-of-block clock times, `HH:MM`; one episode per block per
    /// segment.
    pub block_starts: Vec<String>,
    pub segments: Vec<SyntheticSegmentConfig>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            freeflow_mph: 65.0,
            trough_mph: 25.0,
            ramp_down_min: 30,
            dwell_min: 20,
            ramp_up_min: 30,
            block_min: 240,
            inject_slowdown_min: 4,
            inject_recovery_min: 4,
            noise_sigma_mph: 0.0,
            seed: 42,
            day: "2024-03-05".into(),
            block_starts: vec!["06:00".into(), "14:00".into()],
            segments: vec![
                SyntheticSegmentConfig {
                    segment_id: "AB".into(),
                    length_mi: 1.7,
                    pieces: 2,
                },
                SyntheticSegmentConfig {
                    segment_id: "CD".into(),
                    length_mi: 2.0,
                    pieces: 1,
                },
            ],
        }
    }
}

/// Every tunable of the pipeline, one section per stage.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub inputs: InputsConfig,
    pub ingest: IngestConfig,
    pub filtering: FilteringConfig,
    pub interpolation: InterpolationConfig,
    pub smoothing: SmoothingConfig,
    pub latency: LatencyConfig,
    pub episodes: EpisodesConfig,
    pub synthetic: SyntheticConfig,
}

impl PipelineConfig {
    /// Reads, parses, and validates a config file. Relative input paths are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: PipelineConfig = toml::from_str(&text).map_err(|e| Error::Config {
            key: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.inputs.resolve(base);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, key: &str, reason: String) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(key, reason))
            }
        }

        let i = &self.ingest;
        check(
            i.passage_gap_min >= 1,
            "ingest.passage_gap_min",
            format!("{} is below 1 minute", i.passage_gap_min),
        )?;
        check(
            i.min_speed_mph.is_finite() && i.min_speed_mph >= 0.0,
            "ingest.min_speed_mph",
            format!("{} mph is not a nonnegative speed", i.min_speed_mph),
        )?;

        let f = &self.filtering;
        check(
            f.sigma_k.is_finite() && f.sigma_k > 0.0,
            "filtering.sigma_k",
            format!("{} is not a positive band width", f.sigma_k),
        )?;
        check(
            f.cov_max.is_finite() && f.cov_max > 0.0,
            "filtering.cov_max",
            format!("{} is not a positive threshold", f.cov_max),
        )?;
        check(
            f.min_count >= 1,
            "filtering.min_count",
            "interval minimum must be at least 1".into(),
        )?;

        // max_gap = 0 is legal: it disables interpolation entirely.
        SmoothingKernel::new(self.smoothing.weights.clone())
            .map_err(|e| Error::config("smoothing.weights", e.to_string()))?;

        ShiftBounds::new(self.latency.lb_min, self.latency.ub_min)
            .map_err(|e| Error::config("latency.lb_min", e.to_string()))?;

        let e = &self.episodes;
        check(
            e.min_phase_min >= 1,
            "episodes.min_phase_min",
            format!("{} is below 1 minute", e.min_phase_min),
        )?;
        check(
            e.freeflow_mph.is_finite() && e.freeflow_mph > 0.0,
            "episodes.freeflow_mph",
            format!("{} mph is not positive", e.freeflow_mph),
        )?;
        check(
            e.drop_fraction > 0.0 && e.drop_fraction < 1.0,
            "episodes.drop_fraction",
            format!("{} is not in (0, 1)", e.drop_fraction),
        )?;
        check(
            e.merge_gap_min >= 0,
            "episodes.merge_gap_min",
            format!("{} is negative", e.merge_gap_min),
        )?;

        let s = &self.synthetic;
        check(
            s.trough_mph > 0.0 && s.trough_mph < s.freeflow_mph,
            "synthetic.trough_mph",
            format!("{} mph must sit in (0, {})", s.trough_mph, s.freeflow_mph),
        )?;
        check(
            s.ramp_down_min >= 1 && s.ramp_up_min >= 1,
            "synthetic.ramp_down_min",
            "ramps must be at least one minute".into(),
        )?;
        check(
            (s.block_min as u64) >= (s.ramp_down_min + s.dwell_min + s.ramp_up_min + 2) as u64,
            "synthetic.block_min",
            format!(
                "{} minutes cannot hold the configured event plus shoulders",
                s.block_min
            ),
        )?;
        check(
            s.noise_sigma_mph.is_finite() && s.noise_sigma_mph >= 0.0,
            "synthetic.noise_sigma_mph",
            format!("{} is not a nonnegative sigma", s.noise_sigma_mph),
        )?;
        check(
            !s.block_starts.is_empty(),
            "synthetic.block_starts",
            "at least one block start is required".into(),
        )?;
        check(
            !s.segments.is_empty(),
            "synthetic.segments",
            "at least one segment is required".into(),
        )?;
        for seg in &s.segments {
            check(
                seg.length_mi.is_finite() && seg.length_mi > 0.0,
                "synthetic.segments",
                format!(
                    "segment {} length {} mi is not positive",
                    seg.segment_id, seg.length_mi
                ),
            )?;
            check(
                seg.pieces >= 1,
                "synthetic.segments",
                format!("segment {} must map to at least one piece", seg.segment_id),
            )?;
        }
        for start in &s.block_starts {
            check(
                parse_clock(start).is_some(),
                "synthetic.block_starts",
                format!("'{start}' is not an HH:MM clock time"),
            )?;
        }
        check(
            chrono::NaiveDate::parse_from_str(&s.day, "%Y-%m-%d").is_ok(),
            "synthetic.day",
            format!("'{}' is not a YYYY-MM-DD date", s.day),
        )?;

        Ok(())
    }

    pub fn filter_settings(&self) -> FilterSettings {
        FilterSettings {
            sigma_k: self.filtering.sigma_k,
            cov_max: self.filtering.cov_max,
            min_count: self.filtering.min_count,
        }
    }

    pub fn gap_policy(&self) -> GapPolicy {
        GapPolicy {
            max_gap: self.interpolation.max_gap,
        }
    }

    pub fn kernel(&self) -> Result<SmoothingKernel> {
        SmoothingKernel::new(self.smoothing.weights.clone())
            .map_err(|e| Error::config("smoothing.weights", e.to_string()))
    }

    pub fn shift_bounds(&self) -> Result<ShiftBounds> {
        ShiftBounds::new(self.latency.lb_min, self.latency.ub_min)
            .map_err(|e| Error::config("latency.lb_min", e.to_string()))
    }

    pub fn analysis_settings(&self) -> Result<AnalysisSettings> {
        Ok(AnalysisSettings {
            bounds: self.shift_bounds()?,
            gap_policy: self.gap_policy(),
            kernel: self.kernel()?,
            min_phase_min: self.episodes.min_phase_min,
        })
    }
}

/// Parses `HH:MM` into minutes past midnight.
pub fn parse_clock(text: &str) -> Option<i64> {
    let (h, m) = text.split_once(':')?;
    let h: i64 = h.parse().ok()?;
    let m: i64 = m.parse().ok()?;
    if (0..24).contains(&h) && (0..60).contains(&m) {
        Some(h * 60 + m)
    } else {
        None
    }
}

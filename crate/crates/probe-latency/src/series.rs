//! Building per-minute speed series.
//!
//! The reference side aggregates matched travel time observations into a
//! minute-by-minute space-mean speed, after discarding outlier trips and
//! minutes too noisy or too thin to trust. The probe side arrives as
//! per-minute speeds on vendor map pieces and is conflated onto the segment
//! by summing piece traversal times.
//!
//! Space-mean speed is deliberately time-weighted: a minute's speed is total
//! distance over total time, `n * length / sum(travel_time)`, equivalently
//! the harmonic mean of the trip speeds. Averaging the speeds directly would
//! overweight fast vehicles, which spend the least time on the road.

use crate::error::{Error, Result};
use crate::ingest::{SegmentDefinition, TravelTimeObservation};
use crate::types::{MinuteRange, MinuteStamp, SeriesSource, SpeedSeries};
use std::collections::BTreeMap;

/// All travel time observations labeled to one minute.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSample {
    pub minute: MinuteStamp,
    pub speeds_mph: Vec<f64>,
}

/// Interval filter tunables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSettings {
    pub sigma_k: f64,
    pub cov_max: f64,
    pub min_count: usize,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings {
            sigma_k: 1.5,
            cov_max: 1.0,
            min_count: 3,
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation. The interval IS the population of trips
/// that minute, not a sample from a larger one.
fn population_sigma(values: &[f64], mu: f64) -> f64 {
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / values.len() as f64;
    var.sqrt()
}

/// Keep-mask for speeds within `mean +/- k * sigma` (inclusive). Intervals
/// with fewer than two observations pass through untouched.
fn sigma_mask(speeds: &[f64], k: f64) -> Vec<bool> {
    if speeds.len() < 2 {
        return vec![true; speeds.len()];
    }
    let mu = mean(speeds);
    let bound = k * population_sigma(speeds, mu);
    speeds.iter().map(|v| (v - mu).abs() <= bound).collect()
}

/// Drops speeds outside `mean +/- k * sigma` of their interval.
pub fn filter_sigma(sample: &IntervalSample, k: f64) -> IntervalSample {
    let mask = sigma_mask(&sample.speeds_mph, k);
    let speeds_mph = sample
        .speeds_mph
        .iter()
        .zip(&mask)
        .filter_map(|(v, keep)| keep.then_some(*v))
        .collect();
    IntervalSample {
        minute: sample.minute,
        speeds_mph,
    }
}

/// Outcome of the interval-level gates, with the reason kept for stats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntervalValidation {
    Kept,
    /// Coefficient of variation (sigma / mean) above the maximum.
    ExcludedCov(f64),
    /// Fewer observations than the minimum.
    ExcludedCount(usize),
}

/// Gates an interval after outlier filtering: first on relative spread
/// (COV = sigma / mean), then on observation count.
pub fn validate_interval(
    sample: &IntervalSample,
    cov_max: f64,
    min_count: usize,
) -> IntervalValidation {
    let n = sample.speeds_mph.len();
    if n == 0 {
        return IntervalValidation::ExcludedCount(0);
    }
    let mu = mean(&sample.speeds_mph);
    let cov = population_sigma(&sample.speeds_mph, mu) / mu;
    if cov > cov_max {
        return IntervalValidation::ExcludedCov(cov);
    }
    if n < min_count {
        return IntervalValidation::ExcludedCount(n);
    }
    IntervalValidation::Kept
}

/// Space-mean speed per minute over already-filtered observations:
/// `n * length / sum(travel_time)`. Minutes inside the observed span with no
/// observations come out missing.
pub fn aggregate_intervals(
    observations: &[TravelTimeObservation],
    segment: &SegmentDefinition,
) -> Result<SpeedSeries> {
    segment.validate()?;
    if observations.is_empty() {
        return Err(Error::invalid(format!(
            "segment {}: no observations to aggregate",
            segment.segment_id
        )));
    }

    let mut by_minute: BTreeMap<MinuteStamp, (usize, f64)> = BTreeMap::new();
    for obs in observations {
        let entry = by_minute.entry(obs.minute()).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += obs.travel_time_s;
    }

    let start = *by_minute.keys().next().expect("nonempty");
    let end = *by_minute.keys().next_back().expect("nonempty") + 1;
    let span = MinuteRange::new(start, end)?;
    let values = span
        .iter()
        .map(|m| {
            by_minute.get(&m).map(|(n, tt_s)| {
                let hours = tt_s / 3600.0;
                (*n as f64 * segment.length_mi) / hours
            })
        })
        .collect();

    SpeedSeries::new(
        segment.segment_id.clone(),
        SeriesSource::Reference,
        start,
        values,
    )
}

/// Stage accounting for one segment's series build.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterStageStats {
    pub input_observations: u64,
    pub dropped_sigma: u64,
    pub dropped_interval: u64,
    pub kept_observations: u64,
    pub intervals_kept: u64,
    pub intervals_excluded_cov: u64,
    pub intervals_excluded_count: u64,
}

#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub series: SpeedSeries,
    pub stats: FilterStageStats,
}

/// Full reference-side build for a segment: bucket observations by arrival
/// minute, filter outliers, gate intervals, aggregate the survivors.
pub fn build_segment_series(
    observations: &[TravelTimeObservation],
    segment: &SegmentDefinition,
    filter: &FilterSettings,
) -> Result<BuildOutcome> {
    segment.validate()?;
    if observations.is_empty() {
        return Err(Error::invalid(format!(
            "segment {}: no observations to aggregate",
            segment.segment_id
        )));
    }

    let mut by_minute: BTreeMap<MinuteStamp, Vec<&TravelTimeObservation>> = BTreeMap::new();
    for obs in observations {
        by_minute.entry(obs.minute()).or_default().push(obs);
    }

    let mut stats = FilterStageStats {
        input_observations: observations.len() as u64,
        ..Default::default()
    };
    let mut kept: Vec<TravelTimeObservation> = Vec::new();
    for (_, bucket) in by_minute {
        let speeds: Vec<f64> = bucket.iter().map(|o| o.speed_mph).collect();
        let mask = sigma_mask(&speeds, filter.sigma_k);
        let survivors: Vec<&TravelTimeObservation> = bucket
            .iter()
            .zip(&mask)
            .filter_map(|(o, keep)| keep.then_some(*o))
            .collect();
        stats.dropped_sigma += (bucket.len() - survivors.len()) as u64;

        let sample = IntervalSample {
            minute: bucket[0].minute(),
            speeds_mph: survivors.iter().map(|o| o.speed_mph).collect(),
        };
        match validate_interval(&sample, filter.cov_max, filter.min_count) {
            IntervalValidation::Kept => {
                stats.intervals_kept += 1;
                stats.kept_observations += survivors.len() as u64;
                kept.extend(survivors.into_iter().cloned());
            }
            IntervalValidation::ExcludedCov(_) => {
                stats.intervals_excluded_cov += 1;
                stats.dropped_interval += survivors.len() as u64;
            }
            IntervalValidation::ExcludedCount(_) => {
                stats.intervals_excluded_count += 1;
                stats.dropped_interval += survivors.len() as u64;
            }
        }
    }

    if kept.is_empty() {
        return Err(Error::invalid(format!(
            "segment {}: every interval was excluded by the filters",
            segment.segment_id
        )));
    }
    let series = aggregate_intervals(&kept, segment)?;
    Ok(BuildOutcome { series, stats })
}

/// One vendor map piece overlapping a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct TmcPiece {
    pub tmc_code: String,
    pub overlap_length_mi: f64,
    pub piece_order: u32,
}

/// How a segment decomposes into vendor map pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct TmcMapping {
    pub segment_id: String,
    pub pieces: Vec<TmcPiece>,
}

impl TmcMapping {
    /// Checks piece lengths are positive and cover the segment length within
    /// 0.01 mi. A mismatch is a mapping configuration problem, never worth
    /// silently rescaling.
    pub fn validate(&self, segment: &SegmentDefinition) -> Result<()> {
        if self.pieces.is_empty() {
            return Err(Error::invalid(format!(
                "segment {}: empty piece mapping",
                self.segment_id
            )));
        }
        let mut total = 0.0;
        for p in &self.pieces {
            if !(p.overlap_length_mi.is_finite() && p.overlap_length_mi > 0.0) {
                return Err(Error::invalid(format!(
                    "segment {}: piece {} overlap {} mi is not positive",
                    self.segment_id, p.tmc_code, p.overlap_length_mi
                )));
            }
            total += p.overlap_length_mi;
        }
        if (total - segment.length_mi).abs() > 0.01 {
            return Err(Error::invalid(format!(
                "segment {}: mapped pieces sum to {:.4} mi but the segment is {:.4} mi",
                self.segment_id, total, segment.length_mi
            )));
        }
        Ok(())
    }
}

/// Conflates per-piece speeds into a per-minute segment speed by summing
/// piece traversal times. A minute missing on any piece is missing for the
/// segment: a partial traversal time understates the segment and would fake
/// a speedup.
pub fn compose_probe_series(
    tmc_series: &BTreeMap<String, SpeedSeries>,
    mapping: &TmcMapping,
    segment: &SegmentDefinition,
) -> Result<SpeedSeries> {
    segment.validate()?;
    mapping.validate(segment)?;

    let mut pieces: Vec<(&TmcPiece, &SpeedSeries)> = Vec::with_capacity(mapping.pieces.len());
    for piece in &mapping.pieces {
        let series = tmc_series.get(&piece.tmc_code).ok_or_else(|| {
            Error::invalid(format!(
                "segment {}: no speed series for mapped piece {}",
                segment.segment_id, piece.tmc_code
            ))
        })?;
        pieces.push((piece, series));
    }
    pieces.sort_by_key(|(p, _)| p.piece_order);

    let start = pieces
        .iter()
        .map(|(_, s)| s.start())
        .min()
        .expect("nonempty mapping");
    let end = pieces
        .iter()
        .map(|(_, s)| s.end())
        .max()
        .expect("nonempty mapping");
    if end <= start {
        return Err(Error::invalid(format!(
            "segment {}: mapped pieces carry no data",
            segment.segment_id
        )));
    }
    let span = MinuteRange::new(start, end)?;
    let total_len: f64 = pieces.iter().map(|(p, _)| p.overlap_length_mi).sum();

    let values = span
        .iter()
        .map(|m| {
            let mut tt_hours = 0.0;
            for (piece, series) in &pieces {
                match series.get(m) {
                    Some(v) => tt_hours += piece.overlap_length_mi / v,
                    None => return None,
                }
            }
            Some(total_len / tt_hours)
        })
        .collect();

    SpeedSeries::new(
        segment.segment_id.clone(),
        SeriesSource::Probe,
        start,
        values,
    )
}

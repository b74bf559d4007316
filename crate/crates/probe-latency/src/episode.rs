//! Episode-level analysis.
//!
//! An episode is one congestion event on one segment: speeds fall from
//! free-flow to a trough (the slowdown phase) and climb back out (the
//! recovery phase). Latency is estimated separately for the full window and
//! for each phase, because a probe feed can lag a breakdown differently than
//! it lags the recovery.
//!
//! Episodes come from an operator file as a rule; [`detect_episodes`] offers
//! a threshold-based sketch for bootstrapping one, nothing more.

use crate::error::{Error, Result};
use crate::exec;
use crate::latency::{estimate_latency, LatencyEstimate, ShiftBounds};
use crate::smoothing::{interpolate_gaps, smooth_zero_phase, GapPolicy, SmoothingKernel};
use crate::types::{MinuteRange, MinuteStamp, Period, SpeedSeries};
use std::collections::BTreeMap;

/// One congestion event on one segment. `end` is exclusive. `transition`
/// (the trough minute) may be supplied by the operator; when absent it is
/// located from the reference curve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub segment_id: String,
    pub start: MinuteStamp,
    pub end: MinuteStamp,
    pub period: Period,
    pub transition: Option<MinuteStamp>,
}

impl Episode {
    pub fn window(&self) -> Result<MinuteRange> {
        MinuteRange::new(self.start, self.end)
    }

    /// Stable identifier used in file names and logs.
    pub fn key(&self) -> String {
        format!(
            "{}_{}",
            self.segment_id,
            self.start.to_datetime().format("%Y%m%dT%H%M")
        )
    }
}

/// Latency estimates for an episode's full window and both phases.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLatencyReport {
    pub segment_id: String,
    pub period: Period,
    pub start: MinuteStamp,
    pub transition: MinuteStamp,
    pub end: MinuteStamp,
    pub full: LatencyEstimate,
    pub slowdown: LatencyEstimate,
    pub recovery: LatencyEstimate,
}

/// Finds the trough: the minute of minimum reference speed strictly inside
/// the window, earliest on ties. A window with no variation has no trough.
pub fn find_transition(reference: &SpeedSeries, window: MinuteRange) -> Result<MinuteStamp> {
    if let Some(at) = reference.first_missing_in(window) {
        return Err(Error::Coverage {
            segment_id: reference.segment_id().to_string(),
            range: window,
            at,
        });
    }

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for t in window.iter() {
        let v = reference.get(t).expect("coverage checked");
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        return Err(Error::NoTransition {
            segment_id: reference.segment_id().to_string(),
            start: window.start,
            end: window.end,
        });
    }

    let mut best: Option<(MinuteStamp, f64)> = None;
    for t in window.iter() {
        if t == window.start {
            continue;
        }
        let v = reference.get(t).expect("coverage checked");
        match best {
            None => best = Some((t, v)),
            Some((_, bv)) if v < bv => best = Some((t, v)),
            _ => {}
        }
    }
    match best {
        Some((t, _)) => Ok(t),
        None => Err(Error::NoTransition {
            segment_id: reference.segment_id().to_string(),
            start: window.start,
            end: window.end,
        }),
    }
}

/// Everything the per-episode pipeline needs besides the data.
#[derive(Debug, Clone)]
pub struct AnalysisSettings {
    pub bounds: ShiftBounds,
    pub gap_policy: GapPolicy,
    pub kernel: SmoothingKernel,
    pub min_phase_min: i64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            bounds: ShiftBounds::default(),
            gap_policy: GapPolicy::default(),
            kernel: SmoothingKernel::default(),
            min_phase_min: 10,
        }
    }
}

/// Margin kept around every prepared window so the evaluated minutes never
/// see the smoother's head or tail renormalization.
fn margin(kernel: &SmoothingKernel) -> i64 {
    kernel.len() as i64 - 1
}

/// Reference slice needed to analyze `window`: the window plus smoothing
/// margins on both sides.
pub fn reference_slice_range(window: MinuteRange, settings: &AnalysisSettings) -> MinuteRange {
    let m = margin(&settings.kernel);
    MinuteRange {
        start: window.start - m,
        end: window.end + m,
    }
}

/// Probe slice needed to analyze `window`: every offset in the bounds must
/// find a probe value for every window minute, so the slice extends `ub`
/// minutes past the window (plus margins, plus `lb` before it when negative).
pub fn probe_slice_range(window: MinuteRange, settings: &AnalysisSettings) -> MinuteRange {
    let m = margin(&settings.kernel);
    let lead = settings.bounds.lb().min(0);
    let tail = settings.bounds.ub().max(0);
    MinuteRange {
        start: window.start + lead - m,
        end: window.end + tail + m,
    }
}

/// Slices, gap-fills, and smooths one series for one analysis window.
/// Missing margin minutes count as boundary gaps: a window whose
/// surroundings are unknown is excluded rather than smoothed against
/// renormalized edges.
pub fn prepare_series(
    series: &SpeedSeries,
    slice: MinuteRange,
    settings: &AnalysisSettings,
) -> Result<SpeedSeries> {
    let sliced = series.slice_padded(slice);
    let filled = interpolate_gaps(&sliced, &settings.gap_policy)?;
    smooth_zero_phase(&filled, &settings.kernel)
}

/// Runs the estimator over an episode's full window and both phases. The
/// series must already be prepared over the slices the settings call for.
pub fn analyze_episode(
    reference: &SpeedSeries,
    probe: &SpeedSeries,
    episode: &Episode,
    settings: &AnalysisSettings,
) -> Result<EpisodeLatencyReport> {
    let window = episode.window()?;
    let transition = match episode.transition {
        Some(t) => {
            if !(episode.start < t && t < episode.end) {
                return Err(Error::invalid(format!(
                    "episode {}: transition {} outside ({}, {})",
                    episode.key(),
                    t,
                    episode.start,
                    episode.end
                )));
            }
            t
        }
        None => find_transition(reference, window)?,
    };

    let slowdown_len = transition - episode.start;
    let recovery_len = episode.end - transition;
    if slowdown_len < settings.min_phase_min {
        return Err(Error::PhaseTooShort {
            segment_id: episode.segment_id.clone(),
            phase: "slowdown",
            len: slowdown_len,
            min: settings.min_phase_min,
        });
    }
    if recovery_len < settings.min_phase_min {
        return Err(Error::PhaseTooShort {
            segment_id: episode.segment_id.clone(),
            phase: "recovery",
            len: recovery_len,
            min: settings.min_phase_min,
        });
    }

    let slowdown_window = MinuteRange::new(episode.start, transition)?;
    let recovery_window = MinuteRange::new(transition, episode.end)?;
    let full = estimate_latency(reference, probe, settings.bounds, window)?;
    let slowdown = estimate_latency(reference, probe, settings.bounds, slowdown_window)?;
    let recovery = estimate_latency(reference, probe, settings.bounds, recovery_window)?;

    Ok(EpisodeLatencyReport {
        segment_id: episode.segment_id.clone(),
        period: episode.period,
        start: episode.start,
        transition,
        end: episode.end,
        full,
        slowdown,
        recovery,
    })
}

/// Prepares both series for one episode and analyzes it.
pub fn run_episode(
    reference_raw: &SpeedSeries,
    probe_raw: &SpeedSeries,
    episode: &Episode,
    settings: &AnalysisSettings,
) -> Result<EpisodeLatencyReport> {
    let window = episode.window()?;
    let reference = prepare_series(
        reference_raw,
        reference_slice_range(window, settings),
        settings,
    )?;
    let probe = prepare_series(probe_raw, probe_slice_range(window, settings), settings)?;
    analyze_episode(&reference, &probe, episode, settings)
}

/// An episode set aside with the reason, for the coverage report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedEpisode {
    pub episode: Episode,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct EpisodeBatchOutcome {
    pub reports: Vec<EpisodeLatencyReport>,
    pub skipped: Vec<SkippedEpisode>,
}

/// True for conditions that disqualify one episode's data without implying
/// anything is wrong with the run as a whole.
fn is_per_episode_condition(err: &Error) -> bool {
    matches!(
        err,
        Error::Coverage { .. }
            | Error::ExcludedWindow { .. }
            | Error::NoTransition { .. }
            | Error::PhaseTooShort { .. }
            | Error::CorrelationUndefined { .. }
    )
}

/// Analyzes a batch of episodes, independently and in input order. Episodes
/// are independent units of work, so they fan out across the thread pool
/// when the `parallel` feature is on; results reduce in input order either
/// way. Per-episode data conditions land in `skipped`; real errors abort.
pub fn run_episodes(
    series_by_segment: &BTreeMap<String, (SpeedSeries, SpeedSeries)>,
    episodes: &[Episode],
    settings: &AnalysisSettings,
) -> Result<EpisodeBatchOutcome> {
    let indexed: Vec<&Episode> = episodes.iter().collect();
    let results = exec::map_ordered(indexed, |episode| {
        let Some((reference, probe)) = series_by_segment.get(&episode.segment_id) else {
            return (
                episode.clone(),
                Err(Error::invalid(format!(
                    "episode {}: no series for segment {}",
                    episode.key(),
                    episode.segment_id
                ))),
            );
        };
        (
            episode.clone(),
            run_episode(reference, probe, episode, settings),
        )
    });

    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for (episode, result) in results {
        match result {
            Ok(report) => reports.push(report),
            Err(err) if is_per_episode_condition(&err) => skipped.push(SkippedEpisode {
                episode,
                reason: err.to_string(),
            }),
            Err(err) => {
                // Missing segment series is an operator mistake worth
                // surfacing per episode, not a fatal condition.
                if matches!(err, Error::Invalid(ref msg) if msg.contains("no series for segment")) {
                    skipped.push(SkippedEpisode {
                        episode,
                        reason: err.to_string(),
                    });
                } else {
                    return Err(err);
                }
            }
        }
    }
    Ok(EpisodeBatchOutcome { reports, skipped })
}

/// Sketches episodes from the reference curve alone: maximal runs below
/// `drop_fraction * freeflow_mph`, runs closer than `merge_gap_min` merged,
/// each run then widened to the nearest minutes back at free flow. Advisory
/// output; an operator episode file always takes precedence.
pub fn detect_episodes(
    reference: &SpeedSeries,
    freeflow_mph: f64,
    drop_fraction: f64,
    merge_gap_min: i64,
) -> Result<Vec<Episode>> {
    if !(freeflow_mph.is_finite() && freeflow_mph > 0.0) {
        return Err(Error::invalid(format!(
            "freeflow speed {freeflow_mph} mph is not positive"
        )));
    }
    if !(drop_fraction > 0.0 && drop_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "drop fraction {drop_fraction} is not in (0, 1)"
        )));
    }
    let threshold = drop_fraction * freeflow_mph;

    // Maximal below-threshold runs as [start, end) index pairs.
    let mut runs: Vec<(i64, i64)> = Vec::new();
    let mut run_start: Option<i64> = None;
    let n = reference.len() as i64;
    for i in 0..n {
        let below = matches!(reference.get(reference.start() + i), Some(v) if v < threshold);
        match (below, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i));
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        runs.push((s, n));
    }

    // Merge dips separated by less than the merge gap.
    let mut merged: Vec<(i64, i64)> = Vec::new();
    for run in runs {
        match merged.last_mut() {
            Some(last) if run.0 - last.1 < merge_gap_min => last.1 = run.1,
            _ => merged.push(run),
        }
    }

    // Widen each run to the nearest free-flow minutes.
    let mut spans: Vec<(i64, i64)> = Vec::new();
    for (mut s, mut e) in merged {
        while s > 0 {
            match reference.get(reference.start() + s - 1) {
                Some(v) if v < freeflow_mph => s -= 1,
                Some(_) => {
                    s -= 1;
                    break;
                }
                None => break,
            }
        }
        while e < n {
            match reference.get(reference.start() + e) {
                Some(v) if v < freeflow_mph => e += 1,
                Some(_) => {
                    e += 1;
                    break;
                }
                None => break,
            }
        }
        match spans.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => spans.push((s, e)),
        }
    }

    Ok(spans
        .into_iter()
        .filter(|(s, e)| e - s >= 2)
        .map(|(s, e)| {
            let start = reference.start() + s;
            Episode {
                segment_id: reference.segment_id().to_string(),
                start,
                end: reference.start() + e,
                period: Period::from_start(start),
                transition: None,
            }
        })
        .collect())
}

/// Means of the best offsets and the average latency over a set of episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub n: usize,
    pub mean_offset_avd: f64,
    pub mean_offset_svd: f64,
    pub mean_offset_cor: f64,
    pub mean_average: f64,
}

fn summarize_estimates<'a, I>(estimates: I) -> Option<SummaryRow>
where
    I: IntoIterator<Item = &'a LatencyEstimate>,
{
    let mut n = 0usize;
    let (mut avd, mut svd, mut cor, mut avg) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for e in estimates {
        n += 1;
        avd += e.best_offset_avd as f64;
        svd += e.best_offset_svd as f64;
        cor += e.best_offset_cor as f64;
        avg += e.average_latency;
    }
    if n == 0 {
        return None;
    }
    let d = n as f64;
    Some(SummaryRow {
        n,
        mean_offset_avd: avd / d,
        mean_offset_svd: svd / d,
        mean_offset_cor: cor / d,
        mean_average: avg / d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Slowdown,
    Recovery,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Slowdown => write!(f, "slowdown"),
            Phase::Recovery => write!(f, "recovery"),
        }
    }
}

/// Histogram of full-window average latencies, rounded to whole minutes,
/// with a running cumulative share and the 95th percentile bin.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyDistribution {
    pub bins: Vec<DistributionBin>,
    pub p95_min: i64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionBin {
    pub latency_min: i64,
    pub count: usize,
    pub cumulative_fraction: f64,
}

/// All summary tables derived from a batch of episode reports.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    /// Full-window means by period, then overall, Table-style.
    pub by_period: Vec<(Period, SummaryRow)>,
    pub overall: SummaryRow,
    /// Full-window means per segment (with its length when known).
    pub by_segment: Vec<(String, Option<f64>, SummaryRow)>,
    /// Phase means by period plus an overall pair.
    pub by_phase: Vec<(Option<Period>, Phase, SummaryRow)>,
    pub distribution: LatencyDistribution,
}

/// Reduces episode reports to the summary tables and the latency
/// distribution. Fails on an empty batch: an all-skipped run should be
/// reported as such, not as a page of NaNs.
pub fn summarize(
    reports: &[EpisodeLatencyReport],
    segment_lengths: &BTreeMap<String, f64>,
) -> Result<Summary> {
    if reports.is_empty() {
        return Err(Error::EmptyReport);
    }

    let periods = [Period::Am, Period::Pm, Period::Other];
    let mut by_period = Vec::new();
    for period in periods {
        let rows = reports
            .iter()
            .filter(|r| r.period == period)
            .map(|r| &r.full);
        if let Some(row) = summarize_estimates(rows) {
            by_period.push((period, row));
        }
    }
    let overall = summarize_estimates(reports.iter().map(|r| &r.full)).expect("nonempty reports");

    let mut segment_ids: Vec<&str> = reports.iter().map(|r| r.segment_id.as_str()).collect();
    segment_ids.sort_unstable();
    segment_ids.dedup();
    let mut by_segment = Vec::new();
    for id in segment_ids {
        let rows = reports
            .iter()
            .filter(|r| r.segment_id == id)
            .map(|r| &r.full);
        let row = summarize_estimates(rows).expect("segment has reports");
        by_segment.push((id.to_string(), segment_lengths.get(id).copied(), row));
    }

    let mut by_phase = Vec::new();
    for period in periods {
        for (phase, pick) in [
            (
                Phase::Slowdown,
                (|r: &EpisodeLatencyReport| &r.slowdown)
                    as fn(&EpisodeLatencyReport) -> &LatencyEstimate,
            ),
            (Phase::Recovery, |r: &EpisodeLatencyReport| &r.recovery),
        ] {
            let rows = reports.iter().filter(|r| r.period == period).map(pick);
            if let Some(row) = summarize_estimates(rows) {
                by_phase.push((Some(period), phase, row));
            }
        }
    }
    for (phase, pick) in [
        (
            Phase::Slowdown,
            (|r: &EpisodeLatencyReport| &r.slowdown)
                as fn(&EpisodeLatencyReport) -> &LatencyEstimate,
        ),
        (Phase::Recovery, |r: &EpisodeLatencyReport| &r.recovery),
    ] {
        let row = summarize_estimates(reports.iter().map(pick)).expect("nonempty reports");
        by_phase.push((None, phase, row));
    }

    let mut histogram: BTreeMap<i64, usize> = BTreeMap::new();
    for r in reports {
        *histogram
            .entry(r.full.average_latency.round() as i64)
            .or_insert(0) += 1;
    }
    let total = reports.len() as f64;
    let mut bins = Vec::with_capacity(histogram.len());
    let mut running = 0usize;
    let mut p95_min = None;
    for (latency_min, count) in histogram {
        running += count;
        let cumulative_fraction = running as f64 / total;
        if p95_min.is_none() && cumulative_fraction >= 0.95 {
            p95_min = Some(latency_min);
        }
        bins.push(DistributionBin {
            latency_min,
            count,
            cumulative_fraction,
        });
    }
    let distribution = LatencyDistribution {
        p95_min: p95_min.expect("cumulative reaches 1.0"),
        bins,
    };

    Ok(Summary {
        by_period,
        overall,
        by_segment,
        by_phase,
        distribution,
    })
}

//! The pipeline stages behind each subcommand.
//!
//! Stages hand data to each other through files in the output directory, so
//! any stage can be rerun on its own: `ingest` and `prepare` write the
//! reference and probe series files, `estimate`/`episodes`/`report` read
//! them back. `all` chains every stage in one process.

use crate::reports::{self, IngestStatsRow};
use probe_latency::config::{parse_clock, PipelineConfig, SyntheticSegmentConfig};
use probe_latency::csvio;
use probe_latency::episode::{
    self, detect_episodes, run_episodes, AnalysisSettings, Episode, EpisodeBatchOutcome,
};
use probe_latency::error::{Error, Result};
use probe_latency::ingest::{
    canonicalize_passages, match_detections, SegmentDefinition, Station, StationIndex,
};
use probe_latency::latency::{estimate_latency, LatencyEstimate};
use probe_latency::series::{build_segment_series, compose_probe_series, TmcMapping, TmcPiece};
use probe_latency::smoothing::{interpolate_gaps, smooth_zero_phase};
use probe_latency::synthetic::{detections_for_reference, generate_pair, SyntheticSpec};
use probe_latency::types::{MinuteRange, MinuteStamp, SeriesSource, SpeedSeries};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

pub struct Ctx {
    pub config: PipelineConfig,
    pub out: PathBuf,
    pub segment_filter: Option<BTreeSet<String>>,
}

impl Ctx {
    fn wants_segment(&self, id: &str) -> bool {
        match &self.segment_filter {
            Some(filter) => filter.contains(id),
            None => true,
        }
    }

    fn input(&self, path: &Option<PathBuf>, key: &str, stage: &str) -> Result<PathBuf> {
        path.clone().ok_or_else(|| {
            Error::config(
                format!("inputs.{key}"),
                format!("required by the {stage} stage but not set"),
            )
        })
    }

    fn reference_series_path(&self) -> PathBuf {
        self.out.join("reference_series.csv")
    }

    fn probe_series_path(&self) -> PathBuf {
        self.out.join("probe_series.csv")
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Generates the synthetic scenario as the same CSV formats the real
/// pipeline ingests: per-block trapezoid episodes on each configured
/// segment, with the configured delays injected into the probe side.
pub fn run_synth(ctx: &Ctx, seed_override: Option<u64>) -> Result<()> {
    let cfg = &ctx.config.synthetic;
    let out = ctx.out.join("fixtures");
    ensure_dir(&out)?;

    let day = chrono::NaiveDate::parse_from_str(&cfg.day, "%Y-%m-%d")
        .map_err(|e| Error::config("synthetic.day", e.to_string()))?;
    let day_start =
        MinuteStamp::from_datetime(day.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc());
    let seed = seed_override.unwrap_or(cfg.seed);

    let mut stations = Vec::new();
    let mut segments = Vec::new();
    let mut detections = Vec::new();
    let mut tmc_series: BTreeMap<String, SpeedSeries> = BTreeMap::new();
    let mut tmc_maps: BTreeMap<String, TmcMapping> = BTreeMap::new();
    let mut episodes = Vec::new();
    let mut truth_rows = Vec::new();

    for (seg_index, seg) in cfg.segments.iter().enumerate() {
        let from_station = format!("{}_A", seg.segment_id);
        let to_station = format!("{}_B", seg.segment_id);
        let from_group = format!("{}_GA", seg.segment_id);
        let to_group = format!("{}_GB", seg.segment_id);
        stations.push(Station {
            station_id: from_station.clone(),
            co_location_group: from_group.clone(),
            position_mi: 0.0,
        });
        stations.push(Station {
            station_id: to_station.clone(),
            co_location_group: to_group.clone(),
            position_mi: seg.length_mi,
        });
        segments.push(SegmentDefinition {
            segment_id: seg.segment_id.clone(),
            from_group,
            to_group,
            length_mi: seg.length_mi,
        });
        tmc_maps.insert(seg.segment_id.clone(), tmc_mapping_for(seg));

        for (block_index, clock) in cfg.block_starts.iter().enumerate() {
            let minutes = parse_clock(clock).ok_or_else(|| {
                Error::config("synthetic.block_starts", format!("'{clock}' is not HH:MM"))
            })?;
            let start = day_start + minutes;
            let spec = SyntheticSpec {
                segment_id: seg.segment_id.clone(),
                start,
                total_min: cfg.block_min as usize,
                freeflow_mph: cfg.freeflow_mph,
                trough_mph: cfg.trough_mph,
                ramp_down_min: cfg.ramp_down_min as usize,
                dwell_min: cfg.dwell_min as usize,
                ramp_up_min: cfg.ramp_up_min as usize,
                inject_slowdown_min: cfg.inject_slowdown_min,
                inject_recovery_min: cfg.inject_recovery_min,
                noise_sigma_mph: cfg.noise_sigma_mph,
                seed: seed.wrapping_add(1000 * seg_index as u64 + block_index as u64),
                quantize_length_mi: Some(seg.length_mi),
            };
            let pair = generate_pair(&spec)?;
            detections.extend(detections_for_reference(
                &pair.reference,
                &from_station,
                &to_station,
                seg.length_mi,
            )?);

            // Every mapped piece carries the composed segment speed, so
            // conflation reproduces it.
            for piece in &tmc_maps[&seg.segment_id].pieces {
                let values: Vec<Option<f64>> = pair.probe.values().to_vec();
                let piece_series = SpeedSeries::new(
                    piece.tmc_code.clone(),
                    SeriesSource::Probe,
                    pair.probe.start(),
                    values,
                )?;
                match tmc_series.remove(&piece.tmc_code) {
                    None => {
                        tmc_series.insert(piece.tmc_code.clone(), piece_series);
                    }
                    Some(existing) => {
                        tmc_series.insert(
                            piece.tmc_code.clone(),
                            concat_series(existing, piece_series)?,
                        );
                    }
                }
            }

            let truth = &pair.truth;
            episodes.push(truth.episode.clone());
            truth_rows.push(format!(
                "{},{},{},{},{},{},{}",
                seg.segment_id,
                truth.episode.start,
                truth.transition,
                truth.episode.end,
                truth.episode.period,
                truth.injected_slowdown_min,
                truth.injected_recovery_min
            ));
        }
    }

    detections.sort_by(|a, b| {
        (a.detected_at, &a.station_id, &a.device_id).cmp(&(
            b.detected_at,
            &b.station_id,
            &b.device_id,
        ))
    });

    csvio::write_detections(&out.join("detections.csv"), &detections)?;
    csvio::write_stations(&out.join("stations.csv"), &stations)?;
    csvio::write_segments(&out.join("segments.csv"), &segments)?;
    csvio::write_tmc_speeds(&out.join("tmc_speeds.csv"), &tmc_series)?;
    csvio::write_tmc_map(&out.join("tmc_map.csv"), &tmc_maps)?;
    csvio::write_episodes(&out.join("episodes.csv"), &episodes)?;

    let truth_path = out.join("truth.csv");
    let mut truth_file = reports::ReportFile::create(&truth_path)?;
    truth_file
        .line("segment_id,start,transition,end,period,inject_slowdown_min,inject_recovery_min")?;
    for row in truth_rows {
        truth_file.line(&row)?;
    }
    truth_file.finish()?;

    eprintln!(
        "synth: wrote {} detections, {} segments, {} episodes under {}",
        detections.len(),
        segments.len(),
        episodes.len(),
        out.display()
    );
    Ok(())
}

/// Splits a segment into map pieces with lengths in proportion 1 : 2 : .. : n.
fn tmc_mapping_for(seg: &SyntheticSegmentConfig) -> TmcMapping {
    let n = seg.pieces.max(1);
    let denom = (n * (n + 1) / 2) as f64;
    let pieces = (1..=n)
        .map(|i| TmcPiece {
            tmc_code: format!("{}_T{}", seg.segment_id, i),
            overlap_length_mi: seg.length_mi * i as f64 / denom,
            piece_order: i,
        })
        .collect();
    TmcMapping {
        segment_id: seg.segment_id.clone(),
        pieces,
    }
}

/// Joins two disjoint blocks of one series into a single series with a gap
/// between them.
fn concat_series(a: SpeedSeries, b: SpeedSeries) -> Result<SpeedSeries> {
    let (first, second) = if a.start() <= b.start() {
        (a, b)
    } else {
        (b, a)
    };
    if second.start() < first.end() {
        return Err(Error::invalid(format!(
            "series blocks for {} overlap at {}",
            first.segment_id(),
            second.start()
        )));
    }
    let mut values = first.values().to_vec();
    values.resize(values.len() + (second.start() - first.end()) as usize, None);
    values.extend_from_slice(second.values());
    SpeedSeries::new(first.segment_id(), first.source(), first.start(), values)
}

/// Detections through filtering to the per-segment reference series. The
/// stage accounting lands in `ingest_stats.csv`.
pub fn run_ingest(ctx: &Ctx) -> Result<BTreeMap<String, SpeedSeries>> {
    ensure_dir(&ctx.out)?;
    let inputs = &ctx.config.inputs;
    let detections_path = ctx.input(&inputs.detections, "detections", "ingest")?;
    let stations_path = ctx.input(&inputs.stations, "stations", "ingest")?;
    let segments_path = ctx.input(&inputs.segments, "segments", "ingest")?;

    let detections = csvio::read_detections(&detections_path)?;
    if detections.is_empty() {
        return Err(Error::Csv {
            path: detections_path,
            line: 1,
            msg: "no detection records".to_string(),
        });
    }
    let stations = csvio::read_stations(&stations_path)?;
    let segments: Vec<SegmentDefinition> = csvio::read_segments(&segments_path)?
        .into_iter()
        .filter(|s| ctx.wants_segment(&s.segment_id))
        .collect();
    if segments.is_empty() {
        return Err(Error::Csv {
            path: segments_path,
            line: 1,
            msg: "no segments selected".to_string(),
        });
    }

    let index = StationIndex::build(&stations)?;
    let passages = canonicalize_passages(&detections, &index, ctx.config.ingest.passage_gap_min);
    for r in passages.rejected.iter().take(5) {
        eprintln!(
            "ingest: rejected detection at {}: {}",
            r.detected_at, r.reason
        );
    }
    if passages.rejected.len() > 5 {
        eprintln!(
            "ingest: ({} rejected detections in total)",
            passages.rejected.len()
        );
    }

    let filter = ctx.config.filter_settings();
    let mut reference = BTreeMap::new();
    let mut stats_rows = Vec::new();
    for segment in &segments {
        let outcome = match_detections(
            &passages.passages,
            &index,
            segment,
            ctx.config.ingest.min_speed_mph,
        )?;
        let mut row = IngestStatsRow {
            segment_id: segment.segment_id.clone(),
            upstream_passages: outcome.stats.upstream_passages,
            downstream_passages: outcome.stats.downstream_passages,
            matched_pairs: outcome.stats.matched,
            dropped_nonpositive: outcome.stats.dropped_nonpositive,
            dropped_floor: outcome.stats.dropped_floor,
            observations: outcome.observations.len() as u64,
            ..IngestStatsRow::default()
        };
        if outcome.observations.is_empty() {
            eprintln!(
                "ingest: segment {}: no matched observations, skipping",
                segment.segment_id
            );
            stats_rows.push(row);
            continue;
        }
        let built = build_segment_series(&outcome.observations, segment, &filter)?;
        row.dropped_sigma = built.stats.dropped_sigma;
        row.dropped_interval = built.stats.dropped_interval;
        row.kept_observations = built.stats.kept_observations;
        row.intervals_kept = built.stats.intervals_kept;
        row.intervals_excluded_cov = built.stats.intervals_excluded_cov;
        row.intervals_excluded_count = built.stats.intervals_excluded_count;
        stats_rows.push(row);
        reference.insert(segment.segment_id.clone(), built.series);
    }

    reports::write_segment_series_file(&ctx.reference_series_path(), &reference)?;
    reports::write_ingest_stats(
        &ctx.out.join("ingest_stats.csv"),
        &stats_rows,
        passages.rejected.len() as u64,
    )?;
    eprintln!(
        "ingest: built {} segment series from {} detections",
        reference.len(),
        detections.len()
    );
    Ok(reference)
}

/// Conflates the vendor per-piece feed onto the segments.
pub fn run_prepare(ctx: &Ctx) -> Result<BTreeMap<String, SpeedSeries>> {
    ensure_dir(&ctx.out)?;
    let inputs = &ctx.config.inputs;
    let speeds_path = ctx.input(&inputs.tmc_speeds, "tmc_speeds", "prepare")?;
    let map_path = ctx.input(&inputs.tmc_map, "tmc_map", "prepare")?;
    let segments_path = ctx.input(&inputs.segments, "segments", "prepare")?;

    let tmc_series = csvio::read_tmc_speeds(&speeds_path)?;
    let mappings = csvio::read_tmc_map(&map_path)?;
    let segments: Vec<SegmentDefinition> = csvio::read_segments(&segments_path)?
        .into_iter()
        .filter(|s| ctx.wants_segment(&s.segment_id))
        .collect();

    let mut probe = BTreeMap::new();
    for segment in &segments {
        let Some(mapping) = mappings.get(&segment.segment_id) else {
            eprintln!(
                "prepare: segment {}: no map pieces, skipping",
                segment.segment_id
            );
            continue;
        };
        let series = compose_probe_series(&tmc_series, mapping, segment)?;
        probe.insert(segment.segment_id.clone(), series);
    }

    reports::write_segment_series_file(&ctx.probe_series_path(), &probe)?;
    eprintln!("prepare: composed {} probe series", probe.len());
    Ok(probe)
}

fn load_reference(ctx: &Ctx) -> Result<BTreeMap<String, SpeedSeries>> {
    csvio::read_segment_series(&ctx.reference_series_path(), SeriesSource::Reference)
}

fn load_probe(ctx: &Ctx) -> Result<BTreeMap<String, SpeedSeries>> {
    csvio::read_segment_series(&ctx.probe_series_path(), SeriesSource::Probe)
}

/// Loads the operator episode file, or detects episodes from the reference
/// when no file is configured.
fn load_episodes(ctx: &Ctx, reference: &BTreeMap<String, SpeedSeries>) -> Result<Vec<Episode>> {
    if let Some(path) = &ctx.config.inputs.episodes {
        let episodes = csvio::read_episodes(path)?
            .into_iter()
            .filter(|e| ctx.wants_segment(&e.segment_id))
            .collect::<Vec<_>>();
        return Ok(episodes);
    }
    eprintln!("episodes: no operator file configured, detecting from the reference (advisory)");
    let cfg = &ctx.config.episodes;
    let settings = ctx.config.analysis_settings()?;
    let mut episodes = Vec::new();
    for series in reference.values() {
        for chunk in smoothed_chunks(series, &settings) {
            episodes.extend(detect_episodes(
                &chunk,
                cfg.freeflow_mph,
                cfg.drop_fraction,
                cfg.merge_gap_min,
            )?);
        }
    }
    episodes.sort_by(|a, b| (&a.segment_id, a.start).cmp(&(&b.segment_id, b.start)));
    Ok(episodes)
}

/// Splits a series at gaps too long to interpolate, interpolates and smooths
/// each piece. Detection runs on the same kind of curve the estimator sees.
fn smoothed_chunks(series: &SpeedSeries, settings: &AnalysisSettings) -> Vec<SpeedSeries> {
    let max_gap = settings.gap_policy.max_gap;
    let values = series.values();
    let mut chunks = Vec::new();
    let mut begin = 0usize;
    let mut i = 0usize;
    while i <= values.len() {
        let end_of_chunk = if i == values.len() {
            true
        } else if values[i].is_none() {
            let run = values[i..].iter().take_while(|v| v.is_none()).count();
            run > max_gap
        } else {
            false
        };
        if end_of_chunk {
            if i > begin {
                let slice: Vec<Option<f64>> = values[begin..i].to_vec();
                if slice.iter().any(Option::is_some) {
                    let start = series.start() + begin as i64;
                    if let Ok(chunk) =
                        SpeedSeries::new(series.segment_id(), series.source(), start, slice)
                    {
                        if let Ok(filled) = interpolate_gaps(&chunk, &settings.gap_policy) {
                            if let Ok(smoothed) = smooth_zero_phase(&filled, &settings.kernel) {
                                chunks.push(smoothed);
                            }
                        }
                    }
                }
            }
            let run = if i < values.len() {
                values[i..].iter().take_while(|v| v.is_none()).count()
            } else {
                0
            };
            i += run.max(1);
            begin = i;
        } else {
            i += 1;
        }
    }
    chunks
}

/// Window estimates: one latency estimate per episode window (or per
/// segment overlap when no episodes are available), with the full objective
/// curves alongside.
pub fn run_estimate(
    ctx: &Ctx,
    reference: Option<&BTreeMap<String, SpeedSeries>>,
    probe: Option<&BTreeMap<String, SpeedSeries>>,
) -> Result<Vec<(String, LatencyEstimate)>> {
    ensure_dir(&ctx.out)?;
    let reference_owned;
    let reference = match reference {
        Some(r) => r,
        None => {
            reference_owned = load_reference(ctx)?;
            &reference_owned
        }
    };
    let probe_owned;
    let probe = match probe {
        Some(p) => p,
        None => {
            probe_owned = load_probe(ctx)?;
            &probe_owned
        }
    };

    let settings = ctx.config.analysis_settings()?;
    let episodes = load_episodes(ctx, reference)?;
    let windows: Vec<(String, MinuteRange)> = if episodes.is_empty() {
        overlap_windows(reference, probe)
    } else {
        episodes
            .iter()
            .map(|e| Ok((e.segment_id.clone(), e.window()?)))
            .collect::<Result<Vec<_>>>()?
    };

    let mut estimates = Vec::new();
    for (segment_id, window) in windows {
        let (Some(r), Some(p)) = (reference.get(&segment_id), probe.get(&segment_id)) else {
            eprintln!("estimate: segment {segment_id}: missing a series, skipping window");
            continue;
        };
        match estimate_window(r, p, window, &settings) {
            Ok(estimate) => estimates.push((segment_id, estimate)),
            Err(err) => eprintln!("estimate: segment {segment_id} window {window}: skipped: {err}"),
        }
    }

    reports::write_window_estimates(&ctx.out.join("window_estimates.csv"), &estimates)?;
    reports::write_curves(&ctx.out.join("curves.csv"), &estimates)?;
    eprintln!("estimate: wrote {} window estimates", estimates.len());
    Ok(estimates)
}

fn estimate_window(
    reference: &SpeedSeries,
    probe: &SpeedSeries,
    window: MinuteRange,
    settings: &AnalysisSettings,
) -> Result<LatencyEstimate> {
    let r = episode::prepare_series(
        reference,
        episode::reference_slice_range(window, settings),
        settings,
    )?;
    let p = episode::prepare_series(
        probe,
        episode::probe_slice_range(window, settings),
        settings,
    )?;
    estimate_latency(&r, &p, settings.bounds, window)
}

/// Largest window with both series present, per segment.
fn overlap_windows(
    reference: &BTreeMap<String, SpeedSeries>,
    probe: &BTreeMap<String, SpeedSeries>,
) -> Vec<(String, MinuteRange)> {
    let mut windows = Vec::new();
    for (id, r) in reference {
        let Some(p) = probe.get(id) else { continue };
        let start = r.start().max(p.start());
        let end = r.end().min(p.end());
        if let Ok(window) = MinuteRange::new(start, end) {
            windows.push((id.clone(), window));
        }
    }
    windows
}

/// Episode analysis over both series: reports plus the skip ledger.
pub fn run_episodes_stage(
    ctx: &Ctx,
    reference: Option<&BTreeMap<String, SpeedSeries>>,
    probe: Option<&BTreeMap<String, SpeedSeries>>,
) -> Result<EpisodeBatchOutcome> {
    ensure_dir(&ctx.out)?;
    let reference_owned;
    let reference = match reference {
        Some(r) => r,
        None => {
            reference_owned = load_reference(ctx)?;
            &reference_owned
        }
    };
    let probe_owned;
    let probe = match probe {
        Some(p) => p,
        None => {
            probe_owned = load_probe(ctx)?;
            &probe_owned
        }
    };

    let episodes = load_episodes(ctx, reference)?;
    let settings = ctx.config.analysis_settings()?;
    let mut series_by_segment: BTreeMap<String, (SpeedSeries, SpeedSeries)> = BTreeMap::new();
    for (id, r) in reference {
        if let Some(p) = probe.get(id) {
            series_by_segment.insert(id.clone(), (r.clone(), p.clone()));
        }
    }

    let outcome = run_episodes(&series_by_segment, &episodes, &settings)?;
    reports::write_episode_report(&ctx.out.join("episode_report.csv"), &outcome.reports)?;
    reports::write_skipped_episodes(&ctx.out.join("skipped_episodes.csv"), &outcome.skipped)?;
    eprintln!(
        "episodes: analyzed {}, skipped {}",
        outcome.reports.len(),
        outcome.skipped.len()
    );
    Ok(outcome)
}

/// Batch outcome plus the reference and probe series it was computed from,
/// for handing a finished `episodes` stage to the report stage in memory.
pub type EpisodeRunState<'a> = (
    &'a EpisodeBatchOutcome,
    &'a BTreeMap<String, SpeedSeries>,
    &'a BTreeMap<String, SpeedSeries>,
);

/// Summary tables, the latency distribution, and per-episode plot data.
pub fn run_report(ctx: &Ctx, precomputed: Option<EpisodeRunState<'_>>) -> Result<()> {
    ensure_dir(&ctx.out)?;
    let owned;
    let reference_owned;
    let probe_owned;
    let (outcome, reference, probe) = match precomputed {
        Some((o, r, p)) => (o, r, p),
        None => {
            reference_owned = load_reference(ctx)?;
            probe_owned = load_probe(ctx)?;
            owned = run_episodes_stage(ctx, Some(&reference_owned), Some(&probe_owned))?;
            (&owned, &reference_owned, &probe_owned)
        }
    };

    if outcome.reports.is_empty() {
        eprintln!("report: no analyzed episodes, skipping summaries and plots");
        return Ok(());
    }

    let segments_lengths = segment_lengths(ctx)?;
    let summary = episode::summarize(&outcome.reports, &segments_lengths)?;
    reports::write_summary_period(&ctx.out.join("summary_period.csv"), &summary)?;
    reports::write_summary_segment(&ctx.out.join("summary_segment.csv"), &summary)?;
    reports::write_summary_phase(&ctx.out.join("summary_phase.csv"), &summary)?;
    reports::write_distribution(&ctx.out.join("distribution.csv"), &summary.distribution)?;

    let settings = ctx.config.analysis_settings()?;
    let plots_dir = ctx.out.join("plots");
    ensure_dir(&plots_dir)?;
    for report in &outcome.reports {
        let (Some(r), Some(p)) = (
            reference.get(&report.segment_id),
            probe.get(&report.segment_id),
        ) else {
            continue;
        };
        let window = MinuteRange::new(report.start, report.end)?;
        let prepared_r = episode::prepare_series(
            r,
            episode::reference_slice_range(window, &settings),
            &settings,
        )?;
        let prepared_p =
            episode::prepare_series(p, episode::probe_slice_range(window, &settings), &settings)?;
        reports::write_aligned(&plots_dir, report, &prepared_r, &prepared_p)?;
    }
    eprintln!(
        "report: wrote summaries over {} episodes and {} aligned plots",
        outcome.reports.len(),
        outcome.reports.len()
    );
    Ok(())
}

fn segment_lengths(ctx: &Ctx) -> Result<BTreeMap<String, f64>> {
    let mut lengths = BTreeMap::new();
    if let Some(path) = &ctx.config.inputs.segments {
        for segment in csvio::read_segments(path)? {
            lengths.insert(segment.segment_id, segment.length_mi);
        }
    }
    Ok(lengths)
}

/// Ingest through report in one process, passing series in memory.
pub fn run_all(ctx: &Ctx) -> Result<()> {
    let reference = run_ingest(ctx)?;
    let probe = run_prepare(ctx)?;
    run_estimate(ctx, Some(&reference), Some(&probe))?;
    let outcome = run_episodes_stage(ctx, Some(&reference), Some(&probe))?;
    run_report(ctx, Some((&outcome, &reference, &probe)))?;
    Ok(())
}

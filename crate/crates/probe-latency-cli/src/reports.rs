//! Report files: plain CSV, one `# schema_version=1` header line, floats at
//! fixed precision, rows in a deterministic order. The only line that varies
//! between identical runs is the `# generated_at=` timestamp.

use probe_latency::episode::{EpisodeLatencyReport, LatencyDistribution, SkippedEpisode, Summary};
use probe_latency::error::{Error, Result};
use probe_latency::latency::LatencyEstimate;
use probe_latency::types::{MinuteRange, SpeedSeries};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

pub struct ReportFile {
    path: PathBuf,
    w: std::io::BufWriter<std::fs::File>,
}

impl ReportFile {
    pub fn create(path: &Path) -> Result<ReportFile> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        }
        let file = std::fs::File::create(path).map_err(|e| io_error(path, e))?;
        let mut report = ReportFile {
            path: path.to_path_buf(),
            w: std::io::BufWriter::new(file),
        };
        report.line(&format!("# schema_version={SCHEMA_VERSION}"))?;
        let now = chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ");
        report.line(&format!("# generated_at={now}"))?;
        Ok(report)
    }

    pub fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.w, "{text}").map_err(|e| io_error(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| io_error(&self.path, e))
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Fixed four-decimal formatting for derived quantities.
fn f4(x: f64) -> String {
    format!("{x:.4}")
}

/// Intermediate series files keep full precision so reloading them loses
/// nothing.
pub fn write_segment_series_file(
    path: &Path,
    series: &BTreeMap<String, SpeedSeries>,
) -> Result<()> {
    let mut out = ReportFile::create(path)?;
    out.line("segment_id,minute,speed_mph")?;
    for (id, s) in series {
        for (minute, value) in s.iter_minutes() {
            if let Some(speed) = value {
                out.line(&format!("{id},{minute},{speed}"))?;
            }
        }
    }
    out.finish()
}

/// Per-segment stage accounting, from detections through interval gating.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestStatsRow {
    pub segment_id: String,
    pub upstream_passages: u64,
    pub downstream_passages: u64,
    pub matched_pairs: u64,
    pub dropped_nonpositive: u64,
    pub dropped_floor: u64,
    pub observations: u64,
    pub dropped_sigma: u64,
    pub dropped_interval: u64,
    pub kept_observations: u64,
    pub intervals_kept: u64,
    pub intervals_excluded_cov: u64,
    pub intervals_excluded_count: u64,
}

pub fn write_ingest_stats(
    path: &Path,
    rows: &[IngestStatsRow],
    rejected_records: u64,
) -> Result<()> {
    let mut out = ReportFile::create(path)?;
    out.line(&format!("# rejected_detections={rejected_records}"))?;
    out.line(
        "segment_id,upstream_passages,downstream_passages,matched_pairs,dropped_nonpositive,dropped_floor,observations,dropped_sigma,dropped_interval,kept_observations,intervals_kept,intervals_excluded_cov,intervals_excluded_count",
    )?;
    for r in rows {
        out.line(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.segment_id,
            r.upstream_passages,
            r.downstream_passages,
            r.matched_pairs,
            r.dropped_nonpositive,
            r.dropped_floor,
            r.observations,
            r.dropped_sigma,
            r.dropped_interval,
            r.kept_observations,
            r.intervals_kept,
            r.intervals_excluded_cov,
            r.intervals_excluded_count
        ))?;
    }
    out.finish()
}

pub fn write_window_estimates(path: &Path, estimates: &[(String, LatencyEstimate)]) -> Result<()> {
    let mut out = ReportFile::create(path)?;
    out.line(
        "segment_id,window_start,window_end,offset_avd,offset_svd,offset_cor,average_latency",
    )?;
    for (segment_id, e) in estimates {
        out.line(&format!(
            "{},{},{},{},{},{},{}",
            segment_id,
            e.window.start,
            e.window.end,
            e.best_offset_avd,
            e.best_offset_svd,
            e.best_offset_cor,
            f4(e.average_latency)
        ))?;
    }
    out.finish()
}

/// Long-format objective curves, one row per (window, candidate offset).
/// The correlation column is empty at offsets where it is undefined.
pub fn write_curves(path: &Path, estimates: &[(String, LatencyEstimate)]) -> Result<()> {
    let mut out = ReportFile::create(path)?;
    out.line("segment_id,window_start,window_end,offset_min,avd,svd,cor")?;
    for (segment_id, e) in estimates {
        for (offset, triple) in &e.curve {
            let cor = triple.cor.map(f4).unwrap_or_default();
            out.line(&format!(
                "{},{},{},{},{},{},{}",
                segment_id,
                e.window.start,
                e.window.end,
                offset,
                f4(triple.avd),
                f4(triple.svd),
                cor
            ))?;
        }
    }
    out.finish()
}

fn episode_phase_row(r: &EpisodeLatencyReport, phase: &str, e: &LatencyEstimate) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.segment_id,
        r.period,
        r.start,
        r.transition,
        r.end,
        phase,
        e.window.start,
        e.window.end,
        e.best_offset_avd,
        e.best_offset_svd,
        e.best_offset_cor,
        f4(e.average_latency),
        f4(e.cor_peak)
    )
}

pub fn write_episode_report(path: &Path, reports: &[EpisodeLatencyReport]) -> Result<()> {
    let mut out = ReportFile::create(path)?;
    out.line(
        "segment_id,period,start,transition,end,phase,window_start,window_end,offset_avd,offset_svd,offset_cor,average_latency,cor_peak",
    )?;
    for r in reports {
        out.line(&episode_phase_row(r, "full", &r.full))?;
        out.line(&episode_phase_row(r, "slowdown", &r.slowdown))?;
        out.line(&episode_phase_row(r, "recovery", &r.recovery))?;
    }
    out.finish()
}

pub fn write_skipped_episodes(path: &Path, skipped: &[SkippedEpisode]) -> Result<()> {
    let mut out = ReportFile::create(path)?;
    out.line("segment_id,start,end,period,reason")?;
    for s in skipped {
        let reason = s.reason.replace(',', ";");
        out.line(&format!(
            "{},{},{},{},{}",
            s.episode.segment_id, s.episode.start, s.episode.end, s.episode.period, reason
        ))?;
    }
    out.finish()
}

fn summary_cells(row: &probe_latency::episode::SummaryRow) -> String {
    format!(
        "{},{},{},{},{}",
        row.n,
        f4(row.mean_offset_avd),
        f4(row.mean_offset_svd),
        f4(row.mean_offset_cor),
        f4(row.mean_average)
    )
}

pub fn write_summary_period(path: &Path, summary: &Summary) -> Result<()> {
    let mut out = ReportFile::create(path)?;
    out.line(
        "period,n_episodes,mean_offset_avd,mean_offset_svd,mean_offset_cor,mean_average_latency",
    )?;
    for (period, row) in &summary.by_period {
        out.line(&format!("{},{}", period, summary_cells(row)))?;
    }
    out.line(&format!("overall,{}", summary_cells(&summary.overall)))?;
    out.finish()
}

pub fn write_summary_segment(path: &Path, summary: &Summary) -> Result<()> {
    let mut out = ReportFile::create(path)?;
    out.line("segment_id,length_mi,n_episodes,mean_offset_avd,mean_offset_svd,mean_offset_cor,mean_average_latency")?;
    for (segment_id, length, row) in &summary.by_segment {
        let length = length.map(|l| format!("{l}")).unwrap_or_default();
        out.line(&format!("{},{},{}", segment_id, length, summary_cells(row)))?;
    }
    out.finish()
}

pub fn write_summary_phase(path: &Path, summary: &Summary) -> Result<()> {
    let mut out = ReportFile::create(path)?;
    out.line("period,phase,n_episodes,mean_offset_avd,mean_offset_svd,mean_offset_cor,mean_average_latency")?;
    for (period, phase, row) in &summary.by_phase {
        let period = period
            .map(|p| p.to_string())
            .unwrap_or_else(|| "overall".to_string());
        out.line(&format!("{},{},{}", period, phase, summary_cells(row)))?;
    }
    out.finish()
}

pub fn write_distribution(path: &Path, distribution: &LatencyDistribution) -> Result<()> {
    let mut out = ReportFile::create(path)?;
    out.line(&format!("# p95_min={}", distribution.p95_min))?;
    out.line("latency_min,count,cumulative_fraction")?;
    for bin in &distribution.bins {
        out.line(&format!(
            "{},{},{}",
            bin.latency_min,
            bin.count,
            f4(bin.cumulative_fraction)
        ))?;
    }
    out.finish()
}

/// Per-episode aligned-series file: the smoothed series the estimator saw,
/// plus the probe shifted back by the estimated latency so a perfect
/// estimate overlays the reference.
pub fn write_aligned(
    dir: &Path,
    report: &EpisodeLatencyReport,
    reference: &SpeedSeries,
    probe: &SpeedSeries,
) -> Result<PathBuf> {
    let shift = report.full.average_latency.round() as i64;
    let key = format!(
        "{}_{}",
        report.segment_id,
        report.start.to_datetime().format("%Y%m%dT%H%M")
    );
    let path = dir.join(format!("aligned_{key}.csv"));
    let mut out = ReportFile::create(&path)?;
    out.line(&format!("# shift_min={shift}"))?;
    out.line("t,ref_speed,probe_speed,probe_shifted_speed")?;
    let window = MinuteRange::new(report.start, report.end).expect("episode window validated");
    for t in window.iter() {
        let cell = |v: Option<f64>| v.map(f4).unwrap_or_default();
        out.line(&format!(
            "{},{},{},{}",
            t,
            cell(reference.get(t)),
            cell(probe.get(t)),
            cell(probe.get(t + shift))
        ))?;
    }
    out.finish()?;
    Ok(path)
}

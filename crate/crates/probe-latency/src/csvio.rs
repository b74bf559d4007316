//! CSV readers and writers for the pipeline's input formats.
//!
//! Every reader reports failures with the file and line they came from.
//! Writers emit plain headers plus rows in a deterministic order; floating
//! point fields use the shortest round-trip representation so a written file
//! reloads to the same values.

use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::ingest::{DetectionRecord, SegmentDefinition, Station};
use crate::series::{TmcMapping, TmcPiece};
use crate::types::{parse_timestamp, MinuteStamp, Period, SeriesSource, SpeedSeries};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

struct Table {
    path: std::path::PathBuf,
    columns: BTreeMap<String, usize>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn load(path: &Path, required: &[&str]) -> Result<Table> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| csv_open_error(path, e))?;
        let headers = reader
            .headers()
            .map_err(|e| csv_open_error(path, e))?
            .clone();
        let mut columns = BTreeMap::new();
        for (i, name) in headers.iter().enumerate() {
            columns.insert(name.to_string(), i);
        }
        for name in required {
            if !columns.contains_key(*name) {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    line: 1,
                    msg: format!(
                        "missing required column '{name}' (found: {})",
                        headers.iter().collect::<Vec<_>>().join(", ")
                    ),
                });
            }
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                Error::Csv {
                    path: path.to_path_buf(),
                    line,
                    msg: e.to_string(),
                }
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            rows.push((line, record));
        }
        Ok(Table {
            path: path.to_path_buf(),
            columns,
            rows,
        })
    }

    fn error(&self, line: u64, msg: impl Into<String>) -> Error {
        Error::Csv {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    fn field<'a>(&self, line: u64, record: &'a csv::StringRecord, column: &str) -> Result<&'a str> {
        let idx = *self
            .columns
            .get(column)
            .expect("required column checked at load");
        record
            .get(idx)
            .ok_or_else(|| self.error(line, format!("row is missing the '{column}' field")))
    }

    fn optional_field<'a>(&self, record: &'a csv::StringRecord, column: &str) -> Option<&'a str> {
        let idx = *self.columns.get(column)?;
        match record.get(idx) {
            Some("") | None => None,
            Some(v) => Some(v),
        }
    }

    fn f64_field(&self, line: u64, record: &csv::StringRecord, column: &str) -> Result<f64> {
        let raw = self.field(line, record, column)?;
        raw.parse::<f64>().map_err(|_| {
            self.error(
                line,
                format!("'{raw}' in column '{column}' is not a number"),
            )
        })
    }

    fn timestamp_field(
        &self,
        line: u64,
        record: &csv::StringRecord,
        column: &str,
    ) -> Result<chrono::DateTime<chrono::Utc>> {
        let raw = self.field(line, record, column)?;
        parse_timestamp(raw).map_err(|e| self.error(line, format!("column '{column}': {e}")))
    }
}

fn csv_open_error(path: &Path, e: csv::Error) -> Error {
    if let csv::ErrorKind::Io(io) = e.kind() {
        Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(io.kind(), io.to_string()),
        }
    } else {
        Error::Csv {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        }
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `station_id,device_id,detected_at`
pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let table = Table::load(path, &["station_id", "device_id", "detected_at"])?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, record) in &table.rows {
        out.push(DetectionRecord {
            station_id: table.field(*line, record, "station_id")?.to_string(),
            device_id: table.field(*line, record, "device_id")?.to_string(),
            detected_at: table.timestamp_field(*line, record, "detected_at")?,
        });
    }
    Ok(out)
}

/// `station_id,co_location_group,position_mi`
pub fn read_stations(path: &Path) -> Result<Vec<Station>> {
    let table = Table::load(path, &["station_id", "co_location_group", "position_mi"])?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, record) in &table.rows {
        out.push(Station {
            station_id: table.field(*line, record, "station_id")?.to_string(),
            co_location_group: table.field(*line, record, "co_location_group")?.to_string(),
            position_mi: table.f64_field(*line, record, "position_mi")?,
        });
    }
    Ok(out)
}

/// `segment_id,from_group,to_group,length_mi`
pub fn read_segments(path: &Path) -> Result<Vec<SegmentDefinition>> {
    let table = Table::load(path, &["segment_id", "from_group", "to_group", "length_mi"])?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, record) in &table.rows {
        let segment = SegmentDefinition {
            segment_id: table.field(*line, record, "segment_id")?.to_string(),
            from_group: table.field(*line, record, "from_group")?.to_string(),
            to_group: table.field(*line, record, "to_group")?.to_string(),
            length_mi: table.f64_field(*line, record, "length_mi")?,
        };
        segment
            .validate()
            .map_err(|e| table.error(*line, e.to_string()))?;
        out.push(segment);
    }
    Ok(out)
}

fn read_series_table(
    path: &Path,
    id_column: &str,
    source: SeriesSource,
) -> Result<BTreeMap<String, SpeedSeries>> {
    let table = Table::load(path, &[id_column, "minute", "speed_mph"])?;
    let mut per_id: BTreeMap<String, BTreeMap<MinuteStamp, f64>> = BTreeMap::new();
    for (line, record) in &table.rows {
        let id = table.field(*line, record, id_column)?.to_string();
        let dt = table.timestamp_field(*line, record, "minute")?;
        if chrono::Timelike::second(&dt) != 0 {
            return Err(table.error(
                *line,
                format!("minute '{dt}' has nonzero seconds; expected a whole-minute grid"),
            ));
        }
        let minute = MinuteStamp::from_datetime(dt);
        let speed = table.f64_field(*line, record, "speed_mph")?;
        if !(speed.is_finite() && speed > 0.0) {
            return Err(table.error(*line, format!("speed {speed} mph is not positive")));
        }
        if per_id
            .entry(id.clone())
            .or_default()
            .insert(minute, speed)
            .is_some()
        {
            return Err(table.error(*line, format!("duplicate minute {minute} for {id}")));
        }
    }
    let mut out = BTreeMap::new();
    for (id, minutes) in per_id {
        let start = *minutes.keys().next().expect("nonempty map");
        let end = *minutes.keys().next_back().expect("nonempty map") + 1;
        let values = (0..end - start)
            .map(|i| minutes.get(&(start + i)).copied())
            .collect();
        let series = SpeedSeries::new(id.clone(), source, start, values)?;
        out.insert(id, series);
    }
    Ok(out)
}

/// `tmc_code,minute,speed_mph`, one speed series per code. Timestamps must
/// already be truncated to whole minutes; a stray seconds field means the
/// file was produced on the wrong grid.
pub fn read_tmc_speeds(path: &Path) -> Result<BTreeMap<String, SpeedSeries>> {
    read_series_table(path, "tmc_code", SeriesSource::Probe)
}

/// `segment_id,minute,speed_mph`, one series per segment. Used for the
/// intermediate series files the pipeline stages hand to each other.
pub fn read_segment_series(
    path: &Path,
    source: SeriesSource,
) -> Result<BTreeMap<String, SpeedSeries>> {
    read_series_table(path, "segment_id", source)
}

/// `segment_id,tmc_code,overlap_length_mi,piece_order`, one mapping per
/// segment with pieces in declared order.
pub fn read_tmc_map(path: &Path) -> Result<BTreeMap<String, TmcMapping>> {
    let table = Table::load(
        path,
        &["segment_id", "tmc_code", "overlap_length_mi", "piece_order"],
    )?;
    let mut out: BTreeMap<String, TmcMapping> = BTreeMap::new();
    for (line, record) in &table.rows {
        let segment_id = table.field(*line, record, "segment_id")?.to_string();
        let raw_order = table.field(*line, record, "piece_order")?;
        let piece_order: u32 = raw_order.parse().map_err(|_| {
            table.error(
                *line,
                format!("'{raw_order}' in column 'piece_order' is not a whole number"),
            )
        })?;
        let piece = TmcPiece {
            tmc_code: table.field(*line, record, "tmc_code")?.to_string(),
            overlap_length_mi: table.f64_field(*line, record, "overlap_length_mi")?,
            piece_order,
        };
        out.entry(segment_id.clone())
            .or_insert_with(|| TmcMapping {
                segment_id,
                pieces: Vec::new(),
            })
            .pieces
            .push(piece);
    }
    for mapping in out.values_mut() {
        mapping.pieces.sort_by_key(|p| p.piece_order);
        for pair in mapping.pieces.windows(2) {
            if pair[0].piece_order == pair[1].piece_order {
                return Err(Error::invalid(format!(
                    "segment {}: duplicate piece order {}",
                    mapping.segment_id, pair[0].piece_order
                )));
            }
        }
    }
    Ok(out)
}

/// `segment_id,start,end,period[,transition]`
pub fn read_episodes(path: &Path) -> Result<Vec<Episode>> {
    let table = Table::load(path, &["segment_id", "start", "end", "period"])?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, record) in &table.rows {
        let start = MinuteStamp::from_datetime(table.timestamp_field(*line, record, "start")?);
        let end = MinuteStamp::from_datetime(table.timestamp_field(*line, record, "end")?);
        if start >= end {
            return Err(table.error(
                *line,
                format!("episode start {start} is not before end {end}"),
            ));
        }
        let period = Period::parse(table.field(*line, record, "period")?)
            .map_err(|e| table.error(*line, e.to_string()))?;
        let transition = match table.optional_field(record, "transition") {
            Some(raw) => {
                let t = MinuteStamp::from_datetime(
                    parse_timestamp(raw)
                        .map_err(|e| table.error(*line, format!("column 'transition': {e}")))?,
                );
                if !(start < t && t < end) {
                    return Err(table.error(
                        *line,
                        format!("transition {t} lies outside ({start}, {end})"),
                    ));
                }
                Some(t)
            }
            None => None,
        };
        out.push(Episode {
            segment_id: table.field(*line, record, "segment_id")?.to_string(),
            start,
            end,
            period,
            transition,
        });
    }
    Ok(out)
}

fn open_writer(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| io_error(path, e))?;
    Ok(std::io::BufWriter::new(file))
}

fn timestamp_seconds(dt: chrono::DateTime<chrono::Utc>) -> String {
    dt.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn write_detections(path: &Path, detections: &[DetectionRecord]) -> Result<()> {
    let mut w = open_writer(path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "station_id,device_id,detected_at")?;
        for d in detections {
            writeln!(
                w,
                "{},{},{}",
                d.station_id,
                d.device_id,
                timestamp_seconds(d.detected_at)
            )?;
        }
        w.flush()
    })()
    .map_err(|e| io_error(path, e))
}

pub fn write_stations(path: &Path, stations: &[Station]) -> Result<()> {
    let mut w = open_writer(path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "station_id,co_location_group,position_mi")?;
        for s in stations {
            writeln!(
                w,
                "{},{},{}",
                s.station_id, s.co_location_group, s.position_mi
            )?;
        }
        w.flush()
    })()
    .map_err(|e| io_error(path, e))
}

pub fn write_segments(path: &Path, segments: &[SegmentDefinition]) -> Result<()> {
    let mut w = open_writer(path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "segment_id,from_group,to_group,length_mi")?;
        for s in segments {
            writeln!(
                w,
                "{},{},{},{}",
                s.segment_id, s.from_group, s.to_group, s.length_mi
            )?;
        }
        w.flush()
    })()
    .map_err(|e| io_error(path, e))
}

/// Rows sorted by (tmc_code, minute); missing minutes are simply absent.
pub fn write_tmc_speeds(path: &Path, series_by_code: &BTreeMap<String, SpeedSeries>) -> Result<()> {
    let mut w = open_writer(path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "tmc_code,minute,speed_mph")?;
        for (code, series) in series_by_code {
            for (minute, value) in series.iter_minutes() {
                if let Some(speed) = value {
                    writeln!(w, "{},{},{}", code, minute, speed)?;
                }
            }
        }
        w.flush()
    })()
    .map_err(|e| io_error(path, e))
}

pub fn write_tmc_map(path: &Path, mappings: &BTreeMap<String, TmcMapping>) -> Result<()> {
    let mut w = open_writer(path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "segment_id,tmc_code,overlap_length_mi,piece_order")?;
        for mapping in mappings.values() {
            for p in &mapping.pieces {
                writeln!(
                    w,
                    "{},{},{},{}",
                    mapping.segment_id, p.tmc_code, p.overlap_length_mi, p.piece_order
                )?;
            }
        }
        w.flush()
    })()
    .map_err(|e| io_error(path, e))
}

pub fn write_episodes(path: &Path, episodes: &[Episode]) -> Result<()> {
    let mut w = open_writer(path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "segment_id,start,end,period,transition")?;
        for e in episodes {
            let transition = e.transition.map(|t| t.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{}",
                e.segment_id, e.start, e.end, e.period, transition
            )?;
        }
        w.flush()
    })()
    .map_err(|e| io_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn dir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn write(path: &Path, contents: &str) {
        std::fs::write(path, contents).unwrap();
    }

    #[test]
    fn detections_roundtrip() {
        let d = dir();
        let path = d.path().join("detections.csv");
        let records = vec![
            DetectionRecord {
                station_id: "S1".into(),
                device_id: "aa:bb".into(),
                detected_at: chrono::Utc.with_ymd_and_hms(2015, 12, 4, 8, 0, 13).unwrap(),
            },
            DetectionRecord {
                station_id: "S2".into(),
                device_id: "aa:bb".into(),
                detected_at: chrono::Utc.with_ymd_and_hms(2015, 12, 4, 8, 5, 2).unwrap(),
            },
        ];
        write_detections(&path, &records).unwrap();
        assert_eq!(read_detections(&path).unwrap(), records);
    }

    #[test]
    fn bad_timestamp_reports_file_and_line() {
        let d = dir();
        let path = d.path().join("detections.csv");
        write(
            &path,
            "station_id,device_id,detected_at\nS1,aa,2015-12-04T08:00:13Z\nS1,bb,yesterday\n",
        );
        let err = read_detections(&path).unwrap_err();
        match err {
            Error::Csv { path: p, line, msg } => {
                assert!(p.ends_with("detections.csv"));
                assert_eq!(line, 3);
                assert!(msg.contains("detected_at"), "{msg}");
            }
            other => panic!("expected csv error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let d = dir();
        let path = d.path().join("stations.csv");
        write(&path, "station_id,group\nS1,G1\n");
        let err = read_stations(&path).unwrap_err();
        assert!(err.to_string().contains("co_location_group"), "{err}");
    }

    #[test]
    fn missing_file_is_an_io_error_with_the_path() {
        let d = dir();
        let err = read_stations(&d.path().join("absent.csv")).unwrap_err();
        match err {
            Error::Io { path, .. } => assert!(path.ends_with("absent.csv")),
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn tmc_speeds_build_series_with_holes() {
        let d = dir();
        let path = d.path().join("tmc_speeds.csv");
        write(
            &path,
            "tmc_code,minute,speed_mph\n\
             T1,2015-12-04T08:00:00Z,60.5\n\
             T1,2015-12-04T08:02:00Z,58.0\n\
             T2,2015-12-04T08:00:00Z,44.0\n",
        );
        let series = read_tmc_speeds(&path).unwrap();
        assert_eq!(series.len(), 2);
        let t1 = &series["T1"];
        assert_eq!(t1.len(), 3);
        assert_eq!(t1.get(t1.start()), Some(60.5));
        assert_eq!(t1.get(t1.start() + 1), None);
        assert_eq!(t1.get(t1.start() + 2), Some(58.0));
    }

    #[test]
    fn tmc_speeds_reject_sub_minute_timestamps_and_duplicates() {
        let d = dir();
        let path = d.path().join("tmc_speeds.csv");
        write(
            &path,
            "tmc_code,minute,speed_mph\nT1,2015-12-04T08:00:30Z,60.0\n",
        );
        let err = read_tmc_speeds(&path).unwrap_err();
        assert!(err.to_string().contains("nonzero seconds"), "{err}");

        write(
            &path,
            "tmc_code,minute,speed_mph\n\
             T1,2015-12-04T08:00:00Z,60.0\n\
             T1,2015-12-04T08:00:00Z,61.0\n",
        );
        let err = read_tmc_speeds(&path).unwrap_err();
        assert!(err.to_string().contains("duplicate minute"), "{err}");
    }

    #[test]
    fn tmc_map_groups_and_orders_pieces() {
        let d = dir();
        let path = d.path().join("tmc_map.csv");
        write(
            &path,
            "segment_id,tmc_code,overlap_length_mi,piece_order\n\
             AB,T2,0.7,2\n\
             AB,T1,1.0,1\n\
             CD,T3,2.0,1\n",
        );
        let maps = read_tmc_map(&path).unwrap();
        assert_eq!(maps.len(), 2);
        let ab = &maps["AB"];
        assert_eq!(ab.pieces[0].tmc_code, "T1");
        assert_eq!(ab.pieces[1].tmc_code, "T2");
    }

    #[test]
    fn episodes_accept_an_optional_transition_column() {
        let d = dir();
        let path = d.path().join("episodes.csv");
        write(
            &path,
            "segment_id,start,end,period,transition\n\
             AB,2015-12-04T07:20:00Z,2015-12-04T08:41:00Z,AM,2015-12-04T07:50:00Z\n\
             AB,2015-12-04T15:20:00Z,2015-12-04T16:41:00Z,PM,\n",
        );
        let episodes = read_episodes(&path).unwrap();
        assert_eq!(episodes.len(), 2);
        assert!(episodes[0].transition.is_some());
        assert!(episodes[1].transition.is_none());
        assert_eq!(episodes[0].period, Period::Am);

        // The column itself may be absent.
        write(
            &path,
            "segment_id,start,end,period\nAB,2015-12-04T07:20:00Z,2015-12-04T08:41:00Z,AM\n",
        );
        let episodes = read_episodes(&path).unwrap();
        assert_eq!(episodes[0].transition, None);
    }

    #[test]
    fn episode_rows_validate_ordering() {
        let d = dir();
        let path = d.path().join("episodes.csv");
        write(
            &path,
            "segment_id,start,end,period\nAB,2015-12-04T09:00:00Z,2015-12-04T08:00:00Z,AM\n",
        );
        let err = read_episodes(&path).unwrap_err();
        assert!(err.to_string().contains("not before end"), "{err}");
    }

    #[test]
    fn comment_lines_are_skipped_on_read() {
        let d = dir();
        let path = d.path().join("stations.csv");
        write(
            &path,
            "# schema_version=1\nstation_id,co_location_group,position_mi\nS1,G1,0.0\n",
        );
        let stations = read_stations(&path).unwrap();
        assert_eq!(stations.len(), 1);
        assert_eq!(stations[0].station_id, "S1");
    }

    #[test]
    fn segment_rows_are_validated_on_read() {
        let d = dir();
        let path = d.path().join("segments.csv");
        write(
            &path,
            "segment_id,from_group,to_group,length_mi\nAB,G1,G1,1.7\n",
        );
        let err = read_segments(&path).unwrap_err();
        assert!(matches!(err, Error::Csv { line: 2, .. }), "{err:?}");
    }
}

//! Core time and series types shared by every stage.
//!
//! All analysis runs on a one-minute grid. `MinuteStamp` is a minute count
//! since the Unix epoch, so shifting a series by k minutes is integer
//! arithmetic and there is no way to hold a mis-aligned timestamp.

use crate::error::{Error, Result};
use chrono::{DateTime, TimeZone, Timelike, Utc};

/// A UTC timestamp truncated to whole minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MinuteStamp(i64);

impl MinuteStamp {
    pub fn from_minutes(minutes: i64) -> Self {
        MinuteStamp(minutes)
    }

    /// Truncates a timestamp down to its containing minute.
    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        MinuteStamp(dt.timestamp().div_euclid(60))
    }

    pub fn as_minutes(self) -> i64 {
        self.0
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        Utc.timestamp_opt(self.0 * 60, 0)
            .single()
            .expect("minute stamp in datetime range")
    }

    /// Hour of day (0..24) on the clock the timestamps were supplied in.
    pub fn hour(self) -> u32 {
        self.to_datetime().hour()
    }
}

impl std::ops::Add<i64> for MinuteStamp {
    type Output = MinuteStamp;
    fn add(self, rhs: i64) -> MinuteStamp {
        MinuteStamp(self.0 + rhs)
    }
}

impl std::ops::Sub<i64> for MinuteStamp {
    type Output = MinuteStamp;
    fn sub(self, rhs: i64) -> MinuteStamp {
        MinuteStamp(self.0 - rhs)
    }
}

impl std::ops::Sub<MinuteStamp> for MinuteStamp {
    type Output = i64;
    fn sub(self, rhs: MinuteStamp) -> i64 {
        self.0 - rhs.0
    }
}

impl std::fmt::Display for MinuteStamp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.to_datetime().format("%Y-%m-%dT%H:%M:%SZ"))
    }
}

/// Half-open minute window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MinuteRange {
    pub start: MinuteStamp,
    pub end: MinuteStamp,
}

impl MinuteRange {
    pub fn new(start: MinuteStamp, end: MinuteStamp) -> Result<Self> {
        if end <= start {
            return Err(Error::invalid(format!(
                "empty minute range [{start}, {end})"
            )));
        }
        Ok(MinuteRange { start, end })
    }

    pub fn len(&self) -> i64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, m: MinuteStamp) -> bool {
        self.start <= m && m < self.end
    }

    pub fn iter(&self) -> impl Iterator<Item = MinuteStamp> {
        let (a, b) = (self.start.as_minutes(), self.end.as_minutes());
        (a..b).map(MinuteStamp::from_minutes)
    }
}

impl std::fmt::Display for MinuteRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// Which feed a series came from. Carried for labeling only; the math does
/// not branch on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesSource {
    Reference,
    Probe,
}

impl std::fmt::Display for SeriesSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SeriesSource::Reference => write!(f, "reference"),
            SeriesSource::Probe => write!(f, "probe"),
        }
    }
}

/// Time-of-day bucket an episode falls in, taken from its start minute.
/// AM is 05:00 through 11:59, PM is 12:00 through 20:59.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Period {
    Am,
    Pm,
    Other,
}

impl Period {
    /// Buckets an episode by its start time: AM covers 05:00 through 11:59,
    /// PM covers 12:00 through 20:00 inclusive, everything else is other.
    pub fn from_start(start: MinuteStamp) -> Period {
        let dt = start.to_datetime();
        match (dt.hour(), dt.minute()) {
            (5..=11, _) => Period::Am,
            (12..=19, _) => Period::Pm,
            (20, 0) => Period::Pm,
            _ => Period::Other,
        }
    }

    pub fn parse(token: &str) -> Result<Period> {
        match token.trim().to_ascii_lowercase().as_str() {
            "am" => Ok(Period::Am),
            "pm" => Ok(Period::Pm),
            "other" => Ok(Period::Other),
            other => Err(Error::invalid(format!(
                "unknown period '{other}' (expected AM, PM, or other)"
            ))),
        }
    }
}

impl std::fmt::Display for Period {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Period::Am => write!(f, "AM"),
            Period::Pm => write!(f, "PM"),
            Period::Other => write!(f, "other"),
        }
    }
}

/// A per-minute speed curve for one segment. Minutes are contiguous from
/// `start`; `None` marks a minute with no usable value.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedSeries {
    segment_id: String,
    source: SeriesSource,
    start: MinuteStamp,
    values: Vec<Option<f64>>,
}

impl SpeedSeries {
    /// Builds a series, rejecting nonpositive or non-finite speeds.
    pub fn new(
        segment_id: impl Into<String>,
        source: SeriesSource,
        start: MinuteStamp,
        values: Vec<Option<f64>>,
    ) -> Result<Self> {
        let segment_id = segment_id.into();
        for (i, v) in values.iter().enumerate() {
            if let Some(v) = v {
                if !v.is_finite() || *v <= 0.0 {
                    return Err(Error::InvalidSeries {
                        segment_id,
                        reason: format!(
                            "speed {v} at {} is not a positive finite value",
                            start + i as i64
                        ),
                    });
                }
            }
        }
        Ok(SpeedSeries {
            segment_id,
            source,
            start,
            values,
        })
    }

    /// Internal constructor for transforms whose outputs are valid by
    /// construction (convex combinations of valid inputs).
    pub(crate) fn from_transform(
        segment_id: String,
        source: SeriesSource,
        start: MinuteStamp,
        values: Vec<Option<f64>>,
    ) -> Self {
        SpeedSeries {
            segment_id,
            source,
            start,
            values,
        }
    }

    pub fn segment_id(&self) -> &str {
        &self.segment_id
    }

    pub fn source(&self) -> SeriesSource {
        self.source
    }

    pub fn start(&self) -> MinuteStamp {
        self.start
    }

    /// One past the last minute in the series.
    pub fn end(&self) -> MinuteStamp {
        self.start + self.values.len() as i64
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn span(&self) -> Result<MinuteRange> {
        MinuteRange::new(self.start, self.end())
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    /// Speed at a minute, `None` when missing or outside the series.
    pub fn get(&self, m: MinuteStamp) -> Option<f64> {
        let idx = m - self.start;
        if idx < 0 {
            return None;
        }
        self.values.get(idx as usize).copied().flatten()
    }

    pub fn iter_minutes(&self) -> impl Iterator<Item = (MinuteStamp, Option<f64>)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (self.start + i as i64, *v))
    }

    pub fn is_gap_free(&self) -> bool {
        self.values.iter().all(|v| v.is_some())
    }

    /// Extracts `range` as a new series, padding minutes outside the stored
    /// span with missing values.
    pub fn slice_padded(&self, range: MinuteRange) -> SpeedSeries {
        let values = range.iter().map(|m| self.get(m)).collect();
        SpeedSeries {
            segment_id: self.segment_id.clone(),
            source: self.source,
            start: range.start,
            values,
        }
    }

    /// First minute that fails to hold a value over `range`, if any.
    pub fn first_missing_in(&self, range: MinuteRange) -> Option<MinuteStamp> {
        range.iter().find(|m| self.get(*m).is_none())
    }
}

pub fn parse_timestamp(raw: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(raw.trim())
        .map(|dt| dt.with_timezone(&Utc))
        .map_err(|e| Error::invalid(format!("bad timestamp '{raw}': {e}")))
}

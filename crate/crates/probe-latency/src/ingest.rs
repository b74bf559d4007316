//! Reference feed ingest: turning raw device re-identification sightings
//! into per-segment travel time observations.
//!
//! Stations that share a `co_location_group` watch the same roadside point;
//! a device radioing several times while passing shows up as a burst of
//! sightings that must collapse to one passage. A travel time observation is
//! an upstream passage paired with the device's next downstream passage, and
//! it is stamped with the downstream (arrival) time, because that is the
//! moment the reference feed itself could first have known the trip speed.

use crate::error::{Error, Result};
use crate::types::MinuteStamp;
use chrono::{DateTime, Utc};
use std::collections::BTreeMap;

/// One sighting of a hashed device identifier at a station.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionRecord {
    pub station_id: String,
    pub device_id: String,
    pub detected_at: DateTime<Utc>,
}

/// A roadside detector. Stations with equal `co_location_group` must sit at
/// the same milepost within 0.01 mi.
#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub station_id: String,
    pub co_location_group: String,
    pub position_mi: f64,
}

/// A directed stretch of road between two station groups.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDefinition {
    pub segment_id: String,
    pub from_group: String,
    pub to_group: String,
    pub length_mi: f64,
}

impl SegmentDefinition {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_mi.is_finite() && self.length_mi > 0.0) {
            return Err(Error::invalid(format!(
                "segment {}: length {} mi is not positive",
                self.segment_id, self.length_mi
            )));
        }
        if self.from_group == self.to_group {
            return Err(Error::invalid(format!(
                "segment {}: from_group and to_group are both '{}'",
                self.segment_id, self.from_group
            )));
        }
        Ok(())
    }
}

/// A matched trip across one segment, labeled at the arrival minute.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimeObservation {
    pub segment_id: String,
    pub device_id: String,
    pub departed_at: DateTime<Utc>,
    pub arrived_at: DateTime<Utc>,
    pub travel_time_s: f64,
    pub speed_mph: f64,
}

impl TravelTimeObservation {
    /// Minute the observation counts toward.
    pub fn minute(&self) -> MinuteStamp {
        MinuteStamp::from_datetime(self.arrived_at)
    }
}

/// An input record dropped during ingest, kept for the rejection report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRecord {
    pub station_id: String,
    pub device_id: String,
    pub detected_at: DateTime<Utc>,
    pub reason: String,
}

/// Station lookup with co-location validation done once up front.
#[derive(Debug, Clone)]
pub struct StationIndex {
    group_by_station: BTreeMap<String, String>,
}

impl StationIndex {
    pub fn build(stations: &[Station]) -> Result<Self> {
        let mut group_by_station = BTreeMap::new();
        let mut group_position: BTreeMap<&str, (&str, f64)> = BTreeMap::new();
        for st in stations {
            if !(st.position_mi.is_finite() && st.position_mi >= 0.0) {
                return Err(Error::invalid(format!(
                    "station {}: position {} mi is not a nonnegative finite value",
                    st.station_id, st.position_mi
                )));
            }
            if group_by_station
                .insert(st.station_id.clone(), st.co_location_group.clone())
                .is_some()
            {
                return Err(Error::invalid(format!(
                    "duplicate station_id '{}'",
                    st.station_id
                )));
            }
            match group_position.get(st.co_location_group.as_str()) {
                None => {
                    group_position.insert(&st.co_location_group, (&st.station_id, st.position_mi));
                }
                Some((first_id, pos)) => {
                    if (st.position_mi - pos).abs() > 0.01 {
                        return Err(Error::invalid(format!(
                            "stations {} and {} share group '{}' but sit {:.3} mi apart",
                            first_id,
                            st.station_id,
                            st.co_location_group,
                            (st.position_mi - pos).abs()
                        )));
                    }
                }
            }
        }
        Ok(StationIndex { group_by_station })
    }

    pub fn group_of(&self, station_id: &str) -> Option<&str> {
        self.group_by_station.get(station_id).map(|s| s.as_str())
    }
}

/// Passages plus the records that could not be attributed to a station.
#[derive(Debug, Clone)]
pub struct CanonicalPassages {
    pub passages: Vec<DetectionRecord>,
    pub rejected: Vec<RejectedRecord>,
}

/// Collapses repeated sightings of one device at one station group into
/// single passages. Sightings separated by less than `passage_gap_min`
/// belong to the same passage and keep the earliest timestamp; a longer
/// quiet spell starts a new passage. Unknown stations are reported, not
/// fatal. Output order is deterministic regardless of input order.
pub fn canonicalize_passages(
    detections: &[DetectionRecord],
    stations: &StationIndex,
    passage_gap_min: i64,
) -> CanonicalPassages {
    let gap = chrono::Duration::minutes(passage_gap_min.max(0));

    let mut rejected = Vec::new();
    // (device, group) -> sighting list
    let mut by_device_group: BTreeMap<(String, String), Vec<&DetectionRecord>> = BTreeMap::new();
    for det in detections {
        match stations.group_of(&det.station_id) {
            Some(group) => {
                by_device_group
                    .entry((det.device_id.clone(), group.to_string()))
                    .or_default()
                    .push(det);
            }
            None => rejected.push(RejectedRecord {
                station_id: det.station_id.clone(),
                device_id: det.device_id.clone(),
                detected_at: det.detected_at,
                reason: "unknown station_id".to_string(),
            }),
        }
    }

    let mut passages = Vec::new();
    for ((_, _), mut sightings) in by_device_group {
        sightings
            .sort_by(|a, b| (a.detected_at, &a.station_id).cmp(&(b.detected_at, &b.station_id)));
        let mut run_last: Option<DateTime<Utc>> = None;
        for s in sightings {
            let new_passage = match run_last {
                None => true,
                Some(prev) => s.detected_at - prev >= gap,
            };
            if new_passage {
                passages.push(s.clone());
            }
            run_last = Some(s.detected_at);
        }
    }

    passages.sort_by(|a, b| {
        (a.detected_at, &a.device_id, &a.station_id).cmp(&(
            b.detected_at,
            &b.device_id,
            &b.station_id,
        ))
    });
    rejected.sort_by(|a, b| {
        (a.detected_at, &a.device_id, &a.station_id).cmp(&(
            b.detected_at,
            &b.device_id,
            &b.station_id,
        ))
    });

    CanonicalPassages { passages, rejected }
}

/// Per-segment match accounting. `matched` counts every upstream/downstream
/// pair that formed (the segment's raw observation count); observations with
/// speed under the floor are counted here and dropped from the output.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchStats {
    pub upstream_passages: u64,
    pub downstream_passages: u64,
    pub matched: u64,
    pub dropped_floor: u64,
    pub dropped_nonpositive: u64,
}

/// Matched observations plus the counts needed for stage accounting.
#[derive(Debug, Clone)]
pub struct MatchOutcome {
    pub observations: Vec<TravelTimeObservation>,
    pub stats: MatchStats,
}

/// Pairs each downstream passage with the device's most recent unconsumed
/// upstream passage. A fresh upstream passage replaces an unmatched earlier
/// one, so trips never interleave across a device's repeat visits. Pairs
/// slower than `min_speed_mph` are dropped (and counted): at highway lengths
/// such a pair is a stop for coffee, not a traversal.
pub fn match_detections(
    passages: &[DetectionRecord],
    stations: &StationIndex,
    segment: &SegmentDefinition,
    min_speed_mph: f64,
) -> Result<MatchOutcome> {
    segment.validate()?;
    if !(min_speed_mph.is_finite() && min_speed_mph > 0.0) {
        return Err(Error::invalid(format!(
            "min_speed {min_speed_mph} mph is not positive"
        )));
    }

    // device -> relevant sightings as (time, end) with end: false=upstream.
    let mut per_device: BTreeMap<&str, Vec<(DateTime<Utc>, bool)>> = BTreeMap::new();
    let mut stats = MatchStats::default();
    for p in passages {
        let Some(group) = stations.group_of(&p.station_id) else {
            continue;
        };
        let downstream = if group == segment.from_group {
            false
        } else if group == segment.to_group {
            true
        } else {
            continue;
        };
        per_device
            .entry(p.device_id.as_str())
            .or_default()
            .push((p.detected_at, downstream));
    }

    let mut observations = Vec::new();
    for (device_id, mut sightings) in per_device {
        // Downstream first at equal timestamps, so a same-second upstream
        // sighting never pairs with itself.
        sightings.sort_by_key(|(t, downstream)| (*t, !*downstream));
        let mut pending_upstream: Option<DateTime<Utc>> = None;
        for (t, downstream) in sightings {
            if !downstream {
                stats.upstream_passages += 1;
                pending_upstream = Some(t);
                continue;
            }
            stats.downstream_passages += 1;
            let Some(dep) = pending_upstream.take() else {
                continue;
            };
            let tt_s = (t - dep).num_milliseconds() as f64 / 1000.0;
            if tt_s <= 0.0 {
                stats.dropped_nonpositive += 1;
                continue;
            }
            stats.matched += 1;
            let speed_mph = segment.length_mi / (tt_s / 3600.0);
            if speed_mph < min_speed_mph {
                stats.dropped_floor += 1;
                continue;
            }
            observations.push(TravelTimeObservation {
                segment_id: segment.segment_id.clone(),
                device_id: device_id.to_string(),
                departed_at: dep,
                arrived_at: t,
                travel_time_s: tt_s,
                speed_mph,
            });
        }
    }

    observations.sort_by(|a, b| {
        (a.arrived_at, &a.device_id, a.departed_at).cmp(&(
            b.arrived_at,
            &b.device_id,
            b.departed_at,
        ))
    });
    Ok(MatchOutcome {
        observations,
        stats,
    })
}

//! Synthetic reference/probe pairs with known injected latency.
//!
//! Validation needs cases where the right answer is known in advance. The
//! generator builds a trapezoidal congestion profile (free flow, ramp down,
//! trough dwell, ramp up, free flow), emits it as the reference, and emits a
//! probe copy whose slowdown and recovery are delayed by chosen amounts. The
//! estimator is then judged against those injected delays.
//!
//! Determinism: one seed fixes everything. Reference and probe noise come
//! from separate streams split off a root generator, so changing the probe's
//! noise does not perturb the reference.

use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::ingest::DetectionRecord;
use crate::types::{MinuteStamp, Period, SeriesSource, SpeedSeries};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

/// Shape and injection parameters for one synthetic episode.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub segment_id: String,
    /// Minute of the first sample.
    pub start: MinuteStamp,
    /// Series length in minutes; the trapezoid is centered inside it.
    pub total_min: usize,
    pub freeflow_mph: f64,
    pub trough_mph: f64,
    pub ramp_down_min: usize,
    pub dwell_min: usize,
    pub ramp_up_min: usize,
    /// Delay injected into the probe's slowdown phase, minutes.
    pub inject_slowdown_min: i64,
    /// Delay injected into the probe's recovery phase, minutes.
    pub inject_recovery_min: i64,
    /// Standard deviation of independent per-minute speed noise, mph.
    pub noise_sigma_mph: f64,
    pub seed: u64,
    /// When set, speeds are snapped so the travel time over this segment
    /// length is a whole number of seconds. Detection timestamps have one
    /// second of resolution, so only snapped speeds survive a round trip
    /// through detection files exactly.
    pub quantize_length_mi: Option<f64>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            segment_id: "SYN".into(),
            start: MinuteStamp::from_minutes(0),
            total_min: 240,
            freeflow_mph: 65.0,
            trough_mph: 25.0,
            ramp_down_min: 30,
            dwell_min: 20,
            ramp_up_min: 30,
            inject_slowdown_min: 4,
            inject_recovery_min: 4,
            noise_sigma_mph: 0.0,
            seed: 42,
            quantize_length_mi: None,
        }
    }
}

/// What the generator actually injected, in episode terms.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub episode: Episode,
    pub transition: MinuteStamp,
    pub injected_slowdown_min: i64,
    pub injected_recovery_min: i64,
}

#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub reference: SpeedSeries,
    pub probe: SpeedSeries,
    pub truth: SyntheticTruth,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.segment_id.is_empty() {
            return Err(Error::invalid("synthetic segment id is empty"));
        }
        if !(self.freeflow_mph.is_finite() && self.freeflow_mph > 0.0) {
            return Err(Error::invalid(format!(
                "synthetic free-flow speed {} mph is not positive",
                self.freeflow_mph
            )));
        }
        if !(self.trough_mph.is_finite()
            && self.trough_mph > 0.0
            && self.trough_mph < self.freeflow_mph)
        {
            return Err(Error::invalid(format!(
                "synthetic trough speed {} mph must sit in (0, {})",
                self.trough_mph, self.freeflow_mph
            )));
        }
        if self.ramp_down_min == 0 || self.ramp_up_min == 0 {
            return Err(Error::invalid(
                "synthetic ramps must be at least one minute",
            ));
        }
        let event = self.ramp_down_min + self.dwell_min + self.ramp_up_min;
        if self.total_min < event + 2 {
            return Err(Error::invalid(format!(
                "synthetic series of {} minutes cannot hold a {}-minute event plus shoulders",
                self.total_min, event
            )));
        }
        if !(self.noise_sigma_mph.is_finite() && self.noise_sigma_mph >= 0.0) {
            return Err(Error::invalid("synthetic noise sigma must be nonnegative"));
        }
        if let Some(l) = self.quantize_length_mi {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::invalid(
                    "synthetic quantization length must be positive",
                ));
            }
        }
        Ok(())
    }

    fn lead(&self) -> usize {
        (self.total_min - self.ramp_down_min - self.dwell_min - self.ramp_up_min) / 2
    }
}

/// Snaps a speed so that `length_mi` at that speed takes a whole number of
/// seconds (at least one).
pub fn quantize_speed(speed_mph: f64, length_mi: f64) -> f64 {
    let seconds = (3600.0 * length_mi / speed_mph).round().max(1.0);
    3600.0 * length_mi / seconds
}

/// The noiseless trapezoid, one value per minute.
pub fn base_profile(spec: &SyntheticSpec) -> Vec<f64> {
    let lead = spec.lead();
    let t0 = lead as f64;
    let t1 = (lead + spec.ramp_down_min) as f64;
    let t2 = t1 + spec.dwell_min as f64;
    let t3 = t2 + spec.ramp_up_min as f64;
    (0..spec.total_min)
        .map(|i| {
            let t = i as f64;
            if t <= t0 || t >= t3 {
                spec.freeflow_mph
            } else if t < t1 {
                spec.freeflow_mph + (spec.trough_mph - spec.freeflow_mph) * (t - t0) / (t1 - t0)
            } else if t <= t2 {
                spec.trough_mph
            } else {
                spec.trough_mph + (spec.freeflow_mph - spec.trough_mph) * (t - t2) / (t3 - t2)
            }
        })
        .collect()
}

fn base_at(base: &[f64], index: i64) -> f64 {
    let clamped = index.clamp(0, base.len() as i64 - 1) as usize;
    base[clamped]
}

/// Generates a reference/probe pair with the requested delays injected.
///
/// The probe is the reference shifted right: by `inject_slowdown_min` before
/// the shifted transition and by `inject_recovery_min` from it on. With equal
/// delays this is a uniform shift; with a recovery delay at least as large as
/// the slowdown delay, each phase window sees a pure shift of its own amount.
pub fn generate_pair(spec: &SyntheticSpec) -> Result<SyntheticPair> {
    spec.validate()?;
    let mut base = base_profile(spec);
    if let Some(length) = spec.quantize_length_mi {
        for v in base.iter_mut() {
            *v = quantize_speed(*v, length);
        }
    }

    let lead = spec.lead() as i64;
    let transition_index = lead + spec.ramp_down_min as i64;
    let end_index = transition_index + spec.dwell_min as i64 + spec.ramp_up_min as i64 + 1;
    // The probe switches from the slowdown delay to the recovery delay at
    // the shifted transition, so the recovery window [transition, end) sees
    // only recovery-delayed samples.
    let boundary = transition_index + spec.inject_recovery_min;

    let probe_base: Vec<f64> = (0..spec.total_min as i64)
        .map(|t| {
            let delay = if t < boundary {
                spec.inject_slowdown_min
            } else {
                spec.inject_recovery_min
            };
            base_at(&base, t - delay)
        })
        .collect();

    let mut root = ChaCha8Rng::seed_from_u64(spec.seed);
    let ref_seed = root.next_u64();
    let probe_seed = root.next_u64();

    let reference_values = apply_noise(
        &base,
        spec.noise_sigma_mph,
        ref_seed,
        spec.quantize_length_mi,
    );
    let probe_values = apply_noise(&probe_base, spec.noise_sigma_mph, probe_seed, None);

    let reference = SpeedSeries::new(
        &spec.segment_id,
        SeriesSource::Reference,
        spec.start,
        reference_values.into_iter().map(Some).collect(),
    )?;
    let probe = SpeedSeries::new(
        &spec.segment_id,
        SeriesSource::Probe,
        spec.start,
        probe_values.into_iter().map(Some).collect(),
    )?;

    let start = spec.start + lead;
    let end = spec.start + end_index;
    let truth = SyntheticTruth {
        episode: Episode {
            segment_id: spec.segment_id.clone(),
            start,
            end,
            period: Period::from_start(start),
            transition: Some(spec.start + transition_index),
        },
        transition: spec.start + transition_index,
        injected_slowdown_min: spec.inject_slowdown_min,
        injected_recovery_min: spec.inject_recovery_min,
    };

    Ok(SyntheticPair {
        reference,
        probe,
        truth,
    })
}

fn apply_noise(base: &[f64], sigma: f64, seed: u64, quantize_length_mi: Option<f64>) -> Vec<f64> {
    if sigma == 0.0 {
        return base.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    base.iter()
        .map(|v| {
            let noisy = (v + rng.sample(normal)).max(0.1);
            match quantize_length_mi {
                Some(length) => quantize_speed(noisy, length),
                None => noisy,
            }
        })
        .collect()
}

/// Expands a reference series into detection events that reproduce it
/// exactly through ingest and aggregation: three vehicles per minute, all
/// with the minute's travel time, arriving at seconds 0, 20, and 40.
///
/// Speeds must be whole-second quantized for `length_mi` (detection
/// timestamps carry one second of resolution).
pub fn detections_for_reference(
    reference: &SpeedSeries,
    from_station: &str,
    to_station: &str,
    length_mi: f64,
) -> Result<Vec<DetectionRecord>> {
    if !(length_mi.is_finite() && length_mi > 0.0) {
        return Err(Error::invalid(format!(
            "segment length {length_mi} mi is not positive"
        )));
    }
    let mut out = Vec::new();
    for (minute, value) in reference.iter_minutes() {
        let Some(speed) = value else { continue };
        let tt_seconds = 3600.0 * length_mi / speed;
        let whole = tt_seconds.round();
        if (tt_seconds - whole).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "speed {speed} mph over {length_mi} mi gives a fractional travel time of {tt_seconds} s; quantize the series first"
            )));
        }
        let arrival_base = minute.to_datetime();
        for slot in 0u32..3 {
            let arrived = arrival_base + chrono::Duration::seconds(20 * slot as i64);
            let departed = arrived - chrono::Duration::seconds(whole as i64);
            let device = format!(
                "{}-{}-{:02}",
                reference.segment_id(),
                minute - reference.start(),
                slot
            );
            out.push(DetectionRecord {
                station_id: from_station.to_string(),
                device_id: device.clone(),
                detected_at: departed,
            });
            out.push(DetectionRecord {
                station_id: to_station.to_string(),
                device_id: device,
                detected_at: arrived,
            });
        }
    }
    out.sort_by(|a, b| {
        (a.detected_at, &a.station_id, &a.device_id).cmp(&(
            b.detected_at,
            &b.station_id,
            &b.device_id,
        ))
    });
    Ok(out)
}

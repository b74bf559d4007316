//! Gap interpolation and zero-phase smoothing.
//!
//! Speed curves arrive with occasional missing minutes and minute-to-minute
//! jitter. Short gaps are filled by linear interpolation between the
//! bracketing values; windows with longer gaps (or gaps touching the window
//! edge) are excluded from analysis outright rather than guessed at. Jitter
//! is removed with a finite weighted moving average run in both directions,
//! so the smoothed curve carries no phase shift of its own. That matters
//! here: a one-sided smoother delays every feature it touches, which would
//! bias the very latency this crate exists to measure.

use crate::error::{Error, Result, WindowExclusion};
use crate::types::SpeedSeries;

/// Default smoothing weights, current sample first. Chosen to decay over a
/// five-minute history and sum to 1.
pub const DEFAULT_WEIGHTS: [f64; 5] = [0.33, 0.27, 0.20, 0.13, 0.07];

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Finite averaging weights, `weights()[0]` applying to the current sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingKernel {
    weights: Vec<f64>,
}

impl SmoothingKernel {
    /// Validates that weights are finite, nonnegative, and sum to 1 within
    /// 1e-9.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("smoothing weights must be non-empty"));
        }
        for w in &weights {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::invalid(format!(
                    "smoothing weight {w} is not a nonnegative finite value"
                )));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::invalid(format!(
                "smoothing weights sum to {sum}, expected 1 within {WEIGHT_SUM_TOLERANCE}"
            )));
        }
        Ok(SmoothingKernel { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

impl Default for SmoothingKernel {
    fn default() -> Self {
        SmoothingKernel {
            weights: DEFAULT_WEIGHTS.to_vec(),
        }
    }
}

/// Longest run of missing minutes that interpolation may fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GapPolicy {
    pub max_gap: usize,
}

impl Default for GapPolicy {
    fn default() -> Self {
        GapPolicy { max_gap: 5 }
    }
}

/// Fills interior gaps of up to `policy.max_gap` missing minutes by linear
/// interpolation between the bracketing present values. A longer gap, or a
/// gap touching either end of the series, excludes the window.
pub fn interpolate_gaps(series: &SpeedSeries, policy: &GapPolicy) -> Result<SpeedSeries> {
    let values = series.values();
    let mut out: Vec<Option<f64>> = values.to_vec();

    let mut i = 0usize;
    while i < values.len() {
        if values[i].is_some() {
            i += 1;
            continue;
        }
        let gap_start = i;
        while i < values.len() && values[i].is_none() {
            i += 1;
        }
        let gap_len = i - gap_start;
        let at = series.start() + gap_start as i64;

        if gap_start == 0 || i == values.len() {
            return Err(Error::ExcludedWindow {
                segment_id: series.segment_id().to_string(),
                reason: WindowExclusion::BoundaryGap { at },
            });
        }
        if gap_len > policy.max_gap {
            return Err(Error::ExcludedWindow {
                segment_id: series.segment_id().to_string(),
                reason: WindowExclusion::GapTooLong {
                    at,
                    len: gap_len,
                    max_gap: policy.max_gap,
                },
            });
        }

        let left = values[gap_start - 1].expect("gap bracketed on the left");
        let right = values[i].expect("gap bracketed on the right");
        let n = gap_len as f64;
        for (step, slot) in out[gap_start..i].iter_mut().enumerate() {
            let frac = (step + 1) as f64 / (n + 1.0);
            *slot = Some(left + frac * (right - left));
        }
    }

    Ok(SpeedSeries::from_transform(
        series.segment_id().to_string(),
        series.source(),
        series.start(),
        out,
    ))
}

fn require_gap_free(series: &SpeedSeries) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(series.len());
    for (m, v) in series.iter_minutes() {
        match v {
            Some(v) => out.push(v),
            None => {
                return Err(Error::Coverage {
                    segment_id: series.segment_id().to_string(),
                    range: series.span()?,
                    at: m,
                })
            }
        }
    }
    Ok(out)
}

/// One forward pass of the kernel over a dense buffer. Near the head, where
/// fewer samples exist than the kernel reaches back for, the available
/// weights are renormalized so early output is an average of what history
/// there is instead of leaning on fabricated values.
fn forward_pass(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let reach = weights.len().min(i + 1);
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for j in 0..reach {
            acc += weights[j] * values[i - j];
            wsum += weights[j];
        }
        if reach < weights.len() {
            acc /= wsum;
        }
        out.push(acc);
    }
    out
}

/// Causal weighted-moving-average smoothing. Shifts features later in time
/// by roughly the kernel's center of mass; use [`smooth_zero_phase`] when
/// timing must be preserved.
pub fn smooth_forward(series: &SpeedSeries, kernel: &SmoothingKernel) -> Result<SpeedSeries> {
    let values = require_gap_free(series)?;
    let smoothed = forward_pass(&values, kernel.weights());
    Ok(SpeedSeries::from_transform(
        series.segment_id().to_string(),
        series.source(),
        series.start(),
        smoothed.into_iter().map(Some).collect(),
    ))
}

/// Phase-free smoothing: a forward pass, then the same pass over the
/// reversed buffer, restoring orientation afterwards. The forward pass's
/// delay is cancelled by the reversed pass's equal and opposite delay.
pub fn smooth_zero_phase(series: &SpeedSeries, kernel: &SmoothingKernel) -> Result<SpeedSeries> {
    let values = require_gap_free(series)?;
    let mut buf = forward_pass(&values, kernel.weights());
    buf.reverse();
    let mut buf = forward_pass(&buf, kernel.weights());
    buf.reverse();
    Ok(SpeedSeries::from_transform(
        series.segment_id().to_string(),
        series.source(),
        series.start(),
        buf.into_iter().map(Some).collect(),
    ))
}

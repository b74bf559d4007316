//! The latency estimator: slide the probe curve across a fixed reference
//! window and score the alignment.
//!
//! For each candidate offset the reference value at minute `t` is paired
//! with the probe value at `t + offset`; a probe that reports conditions k
//! minutes late therefore scores best at offset `+k`. Three objectives rate
//! each offset: mean absolute vertical distance (avd), mean squared vertical
//! distance (svd), and the Pearson correlation of the paired values (cor).
//! The estimate takes the avd- and svd-minimizing offsets and the
//! cor-maximizing offset, and averages the three. Ties break toward the
//! smallest offset so repeated runs can never wander.
//!
//! The evaluation window is the same reference-time window at every offset.
//! Letting the window shrink to whatever overlap each offset happens to have
//! would score different offsets on different data.

use crate::error::{Error, Result};
use crate::exec;
use crate::types::{MinuteRange, SpeedSeries};

/// Inclusive offset search range in minutes. `lb` is usually 0 (no latency);
/// a negative `lb` lets the search consider a probe that leads the
/// reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftBounds {
    lb: i64,
    ub: i64,
}

impl ShiftBounds {
    pub fn new(lb: i64, ub: i64) -> Result<Self> {
        if lb > ub {
            return Err(Error::invalid(format!(
                "shift bounds [{lb}, {ub}] are inverted"
            )));
        }
        Ok(ShiftBounds { lb, ub })
    }

    pub fn lb(&self) -> i64 {
        self.lb
    }

    pub fn ub(&self) -> i64 {
        self.ub
    }

    pub fn offsets(&self) -> impl Iterator<Item = i64> {
        self.lb..=self.ub
    }
}

impl Default for ShiftBounds {
    fn default() -> Self {
        ShiftBounds { lb: 0, ub: 15 }
    }
}

/// Scores for one candidate offset. `cor` is `None` when either windowed
/// curve has zero variance; a correlation of a constant is not 0 or 1, it is
/// meaningless, and pretending otherwise would let a flat window win the
/// argmax.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTriple {
    pub avd: f64,
    pub svd: f64,
    pub cor: Option<f64>,
}

/// The estimator's output for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyEstimate {
    pub window: MinuteRange,
    pub bounds: ShiftBounds,
    pub best_offset_avd: i64,
    pub best_offset_svd: i64,
    pub best_offset_cor: i64,
    /// Mean of the three best offsets.
    pub average_latency: f64,
    /// Correlation at `best_offset_cor`.
    pub cor_peak: f64,
    /// `(offset, scores)` for every candidate, ascending by offset.
    pub curve: Vec<(i64, ObjectiveTriple)>,
}

/// Scores one offset over `window`. Both series must hold values at every
/// paired minute: the reference across the window, the probe across the
/// window shifted by `offset`.
pub fn evaluate_objectives(
    reference: &SpeedSeries,
    probe: &SpeedSeries,
    offset: i64,
    window: MinuteRange,
) -> Result<ObjectiveTriple> {
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(window.len() as usize);
    for t in window.iter() {
        let r = reference.get(t).ok_or_else(|| Error::Coverage {
            segment_id: reference.segment_id().to_string(),
            range: window,
            at: t,
        })?;
        let p = probe.get(t + offset).ok_or_else(|| Error::Coverage {
            segment_id: probe.segment_id().to_string(),
            range: MinuteRange {
                start: window.start + offset,
                end: window.end + offset,
            },
            at: t + offset,
        })?;
        pairs.push((r, p));
    }

    let n = pairs.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for (r, p) in &pairs {
        let d = r - p;
        abs_sum += d.abs();
        sq_sum += d * d;
    }
    let avd = abs_sum / n;
    let svd = sq_sum / n;

    let r_mean = pairs.iter().map(|(r, _)| r).sum::<f64>() / n;
    let p_mean = pairs.iter().map(|(_, p)| p).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut r_var = 0.0;
    let mut p_var = 0.0;
    for (r, p) in &pairs {
        let dr = r - r_mean;
        let dp = p - p_mean;
        cov += dr * dp;
        r_var += dr * dr;
        p_var += dp * dp;
    }
    let cor = if r_var == 0.0 || p_var == 0.0 {
        None
    } else {
        Some(cov / (r_var.sqrt() * p_var.sqrt()))
    };

    Ok(ObjectiveTriple { avd, svd, cor })
}

/// Runs the offset search over `bounds`, scoring every candidate on the same
/// window. Offsets are evaluated independently (in parallel when built with
/// the `parallel` feature) and reduced in ascending offset order.
pub fn estimate_latency(
    reference: &SpeedSeries,
    probe: &SpeedSeries,
    bounds: ShiftBounds,
    window: MinuteRange,
) -> Result<LatencyEstimate> {
    if window.is_empty() {
        return Err(Error::invalid(format!("empty evaluation window {window}")));
    }

    let offsets: Vec<i64> = bounds.offsets().collect();
    let scored = exec::try_map_ordered(offsets, |o| {
        evaluate_objectives(reference, probe, o, window).map(|t| (o, t))
    })?;

    let mut best_avd = scored[0];
    let mut best_svd = scored[0];
    let mut best_cor: Option<(i64, f64)> = None;
    for (o, t) in &scored {
        if t.avd < best_avd.1.avd {
            best_avd = (*o, *t);
        }
        if t.svd < best_svd.1.svd {
            best_svd = (*o, *t);
        }
        if let Some(c) = t.cor {
            match best_cor {
                None => best_cor = Some((*o, c)),
                Some((_, bc)) if c > bc => best_cor = Some((*o, c)),
                _ => {}
            }
        }
    }
    let (best_offset_cor, cor_peak) = best_cor.ok_or(Error::CorrelationUndefined {
        lb: bounds.lb,
        ub: bounds.ub,
    })?;

    let average_latency = (best_avd.0 + best_svd.0 + best_offset_cor) as f64 / 3.0;
    Ok(LatencyEstimate {
        window,
        bounds,
        best_offset_avd: best_avd.0,
        best_offset_svd: best_svd.0,
        best_offset_cor,
        average_latency,
        cor_peak,
        curve: scored,
    })
}

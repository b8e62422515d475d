//! Z-normalization, cross-correlation and the shape-based distance (SBD).
//!
//! Lag convention: the cross-correlation entry at lag `w` is
//! `sum_t x[t + w] * y[t]` (zero outside the overlap). A positive lag means
//! `y` has to be delayed by `w` samples (see [`align`]) to line up with `x`;
//! a negative lag means `y` is already late and must be advanced. The
//! `best_lag` of [`sbd`] can therefore be fed straight into [`align`].

use std::cell::RefCell;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Standard deviation below which a series is treated as constant.
pub const CONSTANT_STD: f64 = 1e-12;

/// A channel's measurements for one segment, in engineering units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSeries {
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    pub channel_id: usize,
}

impl RawSeries {
    /// Builds a fully valid series.
    pub fn new(values: Vec<f64>, channel_id: usize) -> Self {
        let valid = vec![true; values.len()];
        Self { values, valid, channel_id }
    }

    pub fn with_mask(values: Vec<f64>, valid: Vec<bool>, channel_id: usize) -> Result<Self> {
        if values.len() != valid.len() {
            return Err(invalid(format!(
                "values ({}) and mask ({}) lengths differ",
                values.len(),
                valid.len()
            )));
        }
        Ok(Self { values, valid, channel_id })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Peak-to-peak range over valid samples, `None` when nothing is valid.
    pub fn valid_range(&self) -> Option<f64> {
        let mut it = self.values.iter().zip(&self.valid).filter(|(_, ok)| **ok).map(|(v, _)| *v);
        let first = it.next()?;
        let (lo, hi) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Some(hi - lo)
    }
}

/// A z-normalized series: zero mean and unit population standard deviation,
/// or identically zero when the input was constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSeries {
    values: Vec<f64>,
    pub channel_id: usize,
}

impl NormalizedSeries {
    /// Wraps values that are already normalized. No check is made.
    pub fn from_normalized(values: Vec<f64>, channel_id: usize) -> Self {
        Self { values, channel_id }
    }

    /// All-zero series of length `m`.
    pub fn zeros(m: usize, channel_id: usize) -> Self {
        Self { values: vec![0.0; m], channel_id }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Lag-0 self inner product.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbdResult {
    pub distance: f64,
    pub best_lag: isize,
}

/// Z-normalizes `values` using the population standard deviation.
pub fn znormalize_values(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std >= CONSTANT_STD) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

/// Z-normalizes a fully valid series. Invalid samples must be removed or
/// filled before calling.
pub fn znormalize(s: &RawSeries) -> Result<NormalizedSeries> {
    if s.len() < 2 {
        return Err(invalid(format!("series needs at least 2 samples, got {}", s.len())));
    }
    if s.valid.len() != s.values.len() || s.valid.iter().any(|v| !v) {
        return Err(invalid(format!("channel {} still has invalid samples", s.channel_id)));
    }
    Ok(NormalizedSeries { values: znormalize_values(&s.values), channel_id: s.channel_id })
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Cross-correlation of two equal-length slices over lags `-(m-1)..=m-1`,
/// computed in the frequency domain. Entry `i` holds lag `i - (m - 1)`.
pub fn cross_correlation_values(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let m = x.len();
    if m != y.len() {
        return Err(invalid(format!("length mismatch: {} vs {}", m, y.len())));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let len = (2 * m - 1).next_power_of_two();
    let (fft, ifft) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(len), p.plan_fft_inverse(len))
    });

    let mut fx: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(*v, 0.0)).collect();
    fx.resize(len, Complex::new(0.0, 0.0));
    let mut fy: Vec<Complex<f64>> = y.iter().map(|v| Complex::new(*v, 0.0)).collect();
    fy.resize(len, Complex::new(0.0, 0.0));
    fft.process(&mut fx);
    fft.process(&mut fy);
    for (a, b) in fx.iter_mut().zip(&fy) {
        *a *= b.conj();
    }
    ifft.process(&mut fx);

    // Circular index `w mod len` holds lag `w`.
    let scale = 1.0 / len as f64;
    let mut out = Vec::with_capacity(2 * m - 1);
    for lag in -(m as isize - 1)..=(m as isize - 1) {
        let idx = lag.rem_euclid(len as isize) as usize;
        out.push(fx[idx].re * scale);
    }
    Ok(out)
}

/// Cross-correlation sequence of two normalized series. See the module docs
/// for the lag convention.
pub fn cross_correlation(x: &NormalizedSeries, y: &NormalizedSeries) -> Result<Vec<f64>> {
    cross_correlation_values(x.values(), y.values())
}

/// Shape-based distance between two equal-length slices.
pub fn sbd_values(x: &[f64], y: &[f64]) -> Result<SbdResult> {
    let m = x.len();
    if m != y.len() {
        return Err(invalid(format!("length mismatch: {} vs {}", m, y.len())));
    }
    if m < 2 {
        return Err(invalid("sbd needs at least 2 samples"));
    }
    let rx: f64 = x.iter().map(|v| v * v).sum();
    let ry: f64 = y.iter().map(|v| v * v).sum();
    if rx == 0.0 || ry == 0.0 {
        return Ok(SbdResult { distance: 1.0, best_lag: 0 });
    }
    let cc = cross_correlation_values(x, y)?;
    let (mut best_idx, mut best) = (m - 1, f64::NEG_INFINITY);
    for (i, v) in cc.iter().enumerate() {
        // Prefer the smallest |lag| among numerically equal maxima.
        let better = *v > best + 1e-12
            || ((*v - best).abs() <= 1e-12
                && (i as isize - (m as isize - 1)).abs() < (best_idx as isize - (m as isize - 1)).abs());
        if better {
            best = *v;
            best_idx = i;
        }
    }
    let ncc = best / (rx * ry).sqrt();
    let distance = (1.0 - ncc).clamp(0.0, 2.0);
    Ok(SbdResult { distance, best_lag: best_idx as isize - (m as isize - 1) })
}

/// Shape-based distance: `1 - max_w CC_w(x, y) / sqrt(R0(x, x) * R0(y, y))`.
///
/// Returns distance 1 and lag 0 when either series is all zero.
pub fn sbd(x: &NormalizedSeries, y: &NormalizedSeries) -> Result<SbdResult> {
    sbd_values(x.values(), y.values())
}

/// Shifts `values` by `lag` samples with zero fill; positive lag delays.
pub fn shift_values(values: &[f64], lag: isize) -> Result<Vec<f64>> {
    let m = values.len() as isize;
    if lag.abs() >= m.max(1) {
        return Err(invalid(format!("lag {lag} out of range for length {m}")));
    }
    let mut out = vec![0.0; values.len()];
    for (t, slot) in out.iter_mut().enumerate() {
        let src = t as isize - lag;
        if (0..m).contains(&src) {
            *slot = values[src as usize];
        }
    }
    Ok(out)
}

/// Shifts a normalized series by `lag` with zero fill. The result is not
/// renormalized.
pub fn align(y: &NormalizedSeries, lag: isize) -> Result<NormalizedSeries> {
    Ok(NormalizedSeries { values: shift_values(y.values(), lag)?, channel_id: y.channel_id })
}

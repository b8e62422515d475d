use serde::{Deserialize, Serialize};

use super::segment::SeriesMatrix;
use super::DetectorConfig;
use crate::error::Result;
use crate::series::{znormalize, NormalizedSeries, RawSeries};

/// Channels that survived preprocessing, z-normalized and ready to cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSegment {
    pub index: u64,
    pub channel_count: usize,
    pub series: Vec<NormalizedSeries>,
    /// Channels left out for too little valid data.
    pub excluded: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkipReason {
    NoDynamics,
    InsufficientData,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Preprocessed {
    Ready(PreparedSegment),
    Skipped { reason: SkipReason, excluded: Vec<usize> },
}

/// Fills invalid slots: linear interpolation between valid neighbours,
/// nearest valid value at the edges. Returns `None` if nothing is valid.
pub fn fill_gaps(series: &RawSeries) -> Option<Vec<f64>> {
    let valid: Vec<usize> = (0..series.len()).filter(|&i| series.valid[i]).collect();
    let (&first, &last) = (valid.first()?, valid.last()?);
    let mut out = series.values.clone();
    for v in out.iter_mut().take(first) {
        *v = series.values[first];
    }
    for v in out.iter_mut().skip(last + 1) {
        *v = series.values[last];
    }
    for w in valid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (va, vb) = (series.values[a], series.values[b]);
        for (i, v) in out.iter_mut().enumerate().take(b).skip(a + 1) {
            let t = (i - a) as f64 / (b - a) as f64;
            *v = va + t * (vb - va);
        }
    }
    Some(out)
}

/// Centered 3-point moving average; the end points average their two
/// available samples.
pub fn moving_average3(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Exclusion, gap filling, smoothing, the dynamics gate and z-normalization.
/// `required` is the number of channels needed to cluster at all.
pub fn preprocess(seg: &SeriesMatrix, cfg: &DetectorConfig, required: usize) -> Result<Preprocessed> {
    let mut excluded = Vec::new();
    let mut eligible = Vec::new();
    for ch in &seg.channels {
        let frac = if ch.is_empty() { 0.0 } else { ch.valid_count() as f64 / ch.len() as f64 };
        if frac + 1e-12 < cfg.min_valid_fraction || ch.valid_count() == 0 {
            excluded.push(ch.channel_id);
        } else {
            eligible.push(ch);
        }
    }
    if eligible.len() < required.max(1) {
        return Ok(Preprocessed::Skipped { reason: SkipReason::InsufficientData, excluded });
    }
    let dynamic = eligible.iter().any(|ch| ch.valid_range().is_some_and(|r| r >= cfg.dynamics_delta));
    if !dynamic {
        return Ok(Preprocessed::Skipped { reason: SkipReason::NoDynamics, excluded });
    }
    let series = eligible
        .iter()
        .map(|ch| {
            let filled = fill_gaps(ch).expect("eligible channels have valid samples");
            znormalize(&RawSeries::new(moving_average3(&filled), ch.channel_id))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Preprocessed::Ready(PreparedSegment { index: seg.index, channel_count: seg.channel_count(), series, excluded }))
}

//! Segment-by-segment detection: clean, preprocess, cluster with K-shape and
//! confirm anomalies against the previous segment and a healthy reference.

mod confirm;
mod preprocess;
mod segment;

pub use confirm::{align_labels, anomaly_check, evidence_terms, sat};
pub use preprocess::{fill_gaps, moving_average3, preprocess, PreparedSegment, Preprocessed, SkipReason};
pub use segment::{clean, segment, SeriesMatrix, Segmenter};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ingest::ValidRange;
use crate::kshape::{fit, select_cluster_count, ClusterModel, InitMode, KShapeConfig, DEFAULT_MAX_ITERATIONS};
use crate::series::NormalizedSeries;

/// Upper bound on the automatically chosen cluster count.
pub const MAX_AUTO_CLUSTERS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Samples per segment; 25 samples at 0.1 Hz is about 4.1 minutes.
    pub segment_size: usize,
    /// Weight of the accumulated (vs reference) term.
    pub alpha: f64,
    /// Distances at or below this are treated as zero.
    pub epsilon: f64,
    pub sat_cap: f64,
    /// Flag when `p >= flag_threshold * c`.
    pub flag_threshold: f64,
    /// Consecutive membership-change segments needed to flag.
    pub persistence: u32,
    pub min_valid_fraction: f64,
    /// Peak-to-peak change (engineering units) below which a channel is flat.
    pub dynamics_delta: f64,
    /// Fixed cluster count; chosen by silhouette when `None`.
    pub cluster_count: Option<usize>,
    pub rng_seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            segment_size: 25,
            alpha: 0.5,
            epsilon: 1e-6,
            sat_cap: 5.0,
            flag_threshold: 2.0,
            persistence: 1,
            min_valid_fraction: 0.7,
            dynamics_delta: 0.5,
            cluster_count: None,
            rng_seed: 42,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::Config(msg.to_string())) };
        check(self.segment_size >= 4, "segment_size must be at least 4")?;
        check((0.0..=1.0).contains(&self.alpha), "alpha must lie in [0, 1]")?;
        check(self.epsilon > 0.0 && self.epsilon.is_finite(), "epsilon must be positive")?;
        check(self.sat_cap > 1.0 && self.sat_cap.is_finite(), "sat_cap must exceed 1")?;
        check(self.flag_threshold > 0.0 && self.flag_threshold.is_finite(), "threshold must be positive")?;
        check(self.persistence >= 1, "persistence must be at least 1")?;
        check(
            self.min_valid_fraction > 0.0 && self.min_valid_fraction <= 1.0,
            "min_valid_fraction must lie in (0, 1]",
        )?;
        check(self.dynamics_delta >= 0.0 && self.dynamics_delta.is_finite(), "dynamics_delta must be non-negative")?;
        check(self.cluster_count.map_or(true, |c| c >= 1), "cluster count must be positive")?;
        Ok(())
    }
}

/// The healthy baseline: first clustering of the pack and its distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModel {
    pub channel_count: usize,
    pub model: ClusterModel,
    /// Per-channel cluster, `None` for channels excluded from the reference.
    pub memberships: Vec<Option<usize>>,
    pub dist0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviousModel {
    pub centroids: Vec<NormalizedSeries>,
    pub dist: Vec<f64>,
    pub memberships: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    pub reference: ReferenceModel,
    pub previous: PreviousModel,
    /// Number of segments processed since the reference.
    pub k: u64,
    /// Last known cluster of every channel.
    pub carried_memberships: Vec<Option<usize>>,
    pub consecutive_change_count: u32,
}

impl DetectorState {
    /// Fresh state whose previous segment is the reference itself.
    pub fn from_reference(reference: ReferenceModel) -> Self {
        Self {
            previous: PreviousModel {
                centroids: reference.model.centroids.clone(),
                dist: reference.dist0.clone(),
                memberships: reference.memberships.clone(),
            },
            k: 0,
            carried_memberships: reference.memberships.clone(),
            consecutive_change_count: 0,
            reference,
        }
    }

    pub fn cluster_count(&self) -> usize {
        self.reference.dist0.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Status {
    Reference,
    Ok,
    Anomaly,
    SkippedNoDynamics,
    SkippedInsufficientData,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Reference => "Reference",
            Status::Ok => "Ok",
            Status::Anomaly => "Anomaly",
            Status::SkippedNoDynamics => "SkippedNoDynamics",
            Status::SkippedInsufficientData => "SkippedInsufficientData",
        }
    }

    pub fn is_skipped(self) -> bool {
        matches!(self, Status::SkippedNoDynamics | Status::SkippedInsufficientData)
    }
}

impl From<SkipReason> for Status {
    fn from(r: SkipReason) -> Self {
        match r {
            SkipReason::NoDynamics => Status::SkippedNoDynamics,
            SkipReason::InsufficientData => Status::SkippedInsufficientData,
        }
    }
}

/// Per-segment output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentVerdict {
    /// Segment position in the stream (skipped segments included).
    pub k: u64,
    pub status: Status,
    /// Cluster per channel; excluded channels carry their last known cluster.
    pub mem: Vec<Option<usize>>,
    pub dist: Vec<f64>,
    /// Membership changed against the previous processed segment.
    pub a: bool,
    /// Accumulated distance-ratio evidence.
    pub p: f64,
    pub offending_channels: Vec<usize>,
    pub excluded_channels: Vec<usize>,
}

impl SegmentVerdict {
    fn skipped(k: u64, status: Status, mem: Vec<Option<usize>>, excluded: Vec<usize>) -> Self {
        Self { k, status, mem, dist: Vec::new(), a: false, p: 0.0, offending_channels: Vec::new(), excluded_channels: excluded }
    }
}

fn per_channel(prepared: &PreparedSegment, memberships: &[usize]) -> Vec<Option<usize>> {
    let mut mem = vec![None; prepared.channel_count];
    for (s, &j) in prepared.series.iter().zip(memberships) {
        mem[s.channel_id] = Some(j);
    }
    mem
}

/// Clusters the first usable segment and freezes it as the reference.
pub fn establish_reference(first: &PreparedSegment, cfg: &DetectorConfig) -> Result<DetectorState> {
    if first.series.iter().all(|s| s.is_zero()) {
        return Err(invalid("every channel is constant; cannot establish a reference"));
    }
    let model = match cfg.cluster_count {
        Some(c) => fit(&first.series, &KShapeConfig::new(c).with_seed(cfg.rng_seed), None)?,
        None => select_cluster_count(&first.series, MAX_AUTO_CLUSTERS, cfg.rng_seed)?.1,
    };
    let memberships = per_channel(first, &model.memberships);
    let reference = ReferenceModel {
        channel_count: first.channel_count,
        dist0: model.per_cluster_distance.clone(),
        memberships,
        model,
    };
    Ok(DetectorState::from_reference(reference))
}

/// Runs one segment through the pipeline against an established state.
/// Skipped segments leave `state` untouched.
pub fn process_segment(
    seg: &SeriesMatrix,
    state: &mut DetectorState,
    cfg: &DetectorConfig,
    ranges: &[ValidRange],
) -> Result<SegmentVerdict> {
    let c = state.cluster_count();
    if seg.channel_count() != state.reference.channel_count {
        return Err(invalid(format!(
            "segment has {} channels, reference has {}",
            seg.channel_count(),
            state.reference.channel_count
        )));
    }
    let cleaned = clean(seg, ranges)?;
    let prepared = match preprocess(&cleaned, cfg, c)? {
        Preprocessed::Skipped { reason, excluded } => {
            return Ok(SegmentVerdict::skipped(seg.index, reason.into(), state.carried_memberships.clone(), excluded));
        }
        Preprocessed::Ready(p) => p,
    };

    let kcfg = KShapeConfig { cluster_count: c, max_iterations: DEFAULT_MAX_ITERATIONS, rng_seed: cfg.rng_seed, init_mode: InitMode::WarmStart };
    let model = fit(&prepared.series, &kcfg, Some(&state.previous.centroids))?;
    let model = align_labels(model, &state.previous.centroids)?;
    let mem_k = per_channel(&prepared, &model.memberships);
    let dist_k = model.per_cluster_distance.clone();

    let (a, p) = anomaly_check(&mem_k, &dist_k, state, cfg)?;
    let changed: Vec<usize> = mem_k
        .iter()
        .zip(&state.previous.memberships)
        .enumerate()
        .filter(|(_, (now, before))| matches!((now, before), (Some(x), Some(y)) if x != y))
        .map(|(ch, _)| ch)
        .collect();

    let consecutive = if a { state.consecutive_change_count + 1 } else { 0 };
    let by_membership = a && consecutive >= cfg.persistence;
    let by_distance = !a && p >= cfg.flag_threshold * c as f64;
    let offending = if by_membership {
        changed
    } else if by_distance {
        let terms = evidence_terms(&dist_k, &state.previous.dist, &state.reference.dist0, cfg);
        let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let worst: Vec<usize> = (0..c).filter(|&i| terms[i] >= top - 1e-12).collect();
        (0..mem_k.len()).filter(|&ch| mem_k[ch].is_some_and(|j| worst.contains(&j))).collect()
    } else {
        Vec::new()
    };
    let status = if by_membership || by_distance { Status::Anomaly } else { Status::Ok };

    for (carried, now) in state.carried_memberships.iter_mut().zip(&mem_k) {
        if now.is_some() {
            *carried = *now;
        }
    }
    state.previous = PreviousModel { centroids: model.centroids, dist: dist_k.clone(), memberships: mem_k };
    state.k += 1;
    state.consecutive_change_count = consecutive;

    Ok(SegmentVerdict {
        k: seg.index,
        status,
        mem: state.carried_memberships.clone(),
        dist: dist_k,
        a,
        p,
        offending_channels: offending,
        excluded_channels: prepared.excluded,
    })
}

/// One pack's detector: establishes the reference on the first usable
/// segment and processes every later one.
#[derive(Debug, Clone)]
pub struct Detector {
    config: DetectorConfig,
    ranges: Vec<ValidRange>,
    state: Option<DetectorState>,
}

impl Detector {
    pub fn new(config: DetectorConfig, ranges: Vec<ValidRange>) -> Result<Self> {
        config.validate()?;
        if let Some(c) = config.cluster_count {
            if c > ranges.len() {
                return Err(Error::Config(format!("{c} clusters requested but only {} channels", ranges.len())));
            }
        }
        Ok(Self { config, ranges, state: None })
    }

    /// Starts from a previously saved reference instead of the first segment.
    pub fn with_reference(config: DetectorConfig, ranges: Vec<ValidRange>, reference: ReferenceModel) -> Result<Self> {
        let mut d = Self::new(config, ranges)?;
        if reference.channel_count != d.ranges.len() {
            return Err(invalid(format!(
                "reference covers {} channels, input has {}",
                reference.channel_count,
                d.ranges.len()
            )));
        }
        d.state = Some(DetectorState::from_reference(reference));
        Ok(d)
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&DetectorState> {
        self.state.as_ref()
    }

    pub fn reference(&self) -> Option<&ReferenceModel> {
        self.state.as_ref().map(|s| &s.reference)
    }

    /// Drops the reference; the next usable segment becomes the new one.
    pub fn reestablish(&mut self) {
        self.state = None;
    }

    pub fn process(&mut self, seg: &SeriesMatrix) -> Result<SegmentVerdict> {
        if seg.channel_count() != self.ranges.len() {
            return Err(invalid(format!("segment has {} channels, expected {}", seg.channel_count(), self.ranges.len())));
        }
        if let Some(state) = self.state.as_mut() {
            return process_segment(seg, state, &self.config, &self.ranges);
        }
        let cleaned = clean(seg, &self.ranges)?;
        let required = self.config.cluster_count.unwrap_or(2);
        match preprocess(&cleaned, &self.config, required)? {
            Preprocessed::Skipped { reason, excluded } => {
                Ok(SegmentVerdict::skipped(seg.index, reason.into(), vec![None; seg.channel_count()], excluded))
            }
            Preprocessed::Ready(prepared) => {
                let state = establish_reference(&prepared, &self.config)?;
                let verdict = SegmentVerdict {
                    k: seg.index,
                    status: Status::Reference,
                    mem: state.reference.memberships.clone(),
                    dist: state.reference.dist0.clone(),
                    a: false,
                    p: 0.0,
                    offending_channels: Vec::new(),
                    excluded_channels: prepared.excluded,
                };
                self.state = Some(state);
                Ok(verdict)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ChannelKind;
    use crate::series::RawSeries;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const M: usize = 25;

    /// Even channels peak mid-window, odd channels at the edges; each has a
    /// small harmonic of its own and a little noise.
    fn channel_value(ch: usize, t: usize, rng: &mut ChaCha8Rng) -> f64 {
        let phase = 2.0 * PI * (t as f64 - 12.0) / M as f64;
        let shape = if ch % 2 == 0 { phase.cos() } else { -phase.cos() };
        let order = 1.0 + (ch / 2 % 3) as f64;
        let own = 0.1 * (2.0 * PI * order * t as f64 / M as f64 + ch as f64).sin();
        30.0 + ch as f64 * 0.1 + shape + own + rng.random_range(-0.01..0.01)
    }

    fn segment_with(index: u64, channels: usize, mut edit: impl FnMut(usize, usize, f64) -> f64) -> SeriesMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(index);
        let chans = (0..channels)
            .map(|ch| {
                let values = (0..M).map(|t| edit(ch, t, channel_value(ch, t, &mut rng))).collect();
                RawSeries::new(values, ch)
            })
            .collect();
        SeriesMatrix { index, start_slot: index * M as u64, channels: chans }
    }

    fn healthy(index: u64, channels: usize) -> SeriesMatrix {
        segment_with(index, channels, |_, _, v| v)
    }

    fn ranges(n: usize) -> Vec<ValidRange> {
        vec![ChannelKind::Temperature.default_range(); n]
    }

    fn detector(n: usize) -> Detector {
        Detector::new(DetectorConfig::default(), ranges(n)).unwrap()
    }

    #[test]
    fn reference_finds_the_two_families() {
        let mut d = detector(8);
        let v = d.process(&healthy(0, 8)).unwrap();
        assert_eq!(v.status, Status::Reference);
        assert_eq!(v.dist.len(), 2);
        let even = v.mem[0];
        let odd = v.mem[1];
        assert_ne!(even, odd);
        for ch in 0..8 {
            assert_eq!(v.mem[ch], if ch % 2 == 0 { even } else { odd }, "channel {ch}");
        }
    }

    #[test]
    fn two_channels_force_two_clusters() {
        let mut d = detector(2);
        let v = d.process(&healthy(0, 2)).unwrap();
        assert_eq!(v.status, Status::Reference);
        assert_eq!(v.dist.len(), 2);
        assert_ne!(v.mem[0], v.mem[1]);
    }

    #[test]
    fn same_distribution_stays_ok_near_unit_ratios() {
        let mut d = detector(8);
        d.process(&healthy(0, 8)).unwrap();
        for k in 1..20 {
            let v = d.process(&healthy(k, 8)).unwrap();
            assert_eq!(v.status, Status::Ok, "segment {k}: {v:?}");
            assert!(!v.a);
            assert!((v.p - 2.0).abs() < 0.6, "segment {k}: p = {}", v.p);
        }
        assert_eq!(d.state().unwrap().k, 19);
    }

    #[test]
    fn channel_switching_family_is_a_membership_anomaly() {
        let mut d = detector(8);
        d.process(&healthy(0, 8)).unwrap();
        d.process(&healthy(1, 8)).unwrap();
        let switched = segment_with(2, 8, |ch, t, v| if ch == 2 { channel_value(3, t, &mut ChaCha8Rng::seed_from_u64(9)) } else { v });
        let v = d.process(&switched).unwrap();
        assert_eq!(v.status, Status::Anomaly);
        assert!(v.a);
        assert_eq!(v.p, 0.0);
        assert_eq!(v.offending_channels, vec![2]);
    }

    #[test]
    fn ramping_channel_is_flagged_within_two_segments() {
        let mut d = detector(8);
        d.process(&healthy(0, 8)).unwrap();
        d.process(&healthy(1, 8)).unwrap();
        let mut flagged = None;
        for k in 2..4u64 {
            let since = (k - 2) as usize * M;
            let seg = segment_with(k, 8, |ch, t, v| if ch == 4 { v + 0.08 * (since + t) as f64 } else { v });
            let v = d.process(&seg).unwrap();
            if v.status == Status::Anomaly {
                flagged = Some(v);
                break;
            }
        }
        let v = flagged.expect("ramp not flagged");
        assert!(v.offending_channels.contains(&4), "{v:?}");
    }

    #[test]
    fn persistence_delays_membership_flags() {
        let cfg = DetectorConfig { persistence: 2, ..DetectorConfig::default() };
        let mut d = Detector::new(cfg, ranges(8)).unwrap();
        d.process(&healthy(0, 8)).unwrap();
        let flip = |k| segment_with(k, 8, |ch, t, v| {
            if ch == 2 {
                channel_value(3, t, &mut ChaCha8Rng::seed_from_u64(k))
            } else if ch == 3 && k % 2 == 0 {
                channel_value(2, t, &mut ChaCha8Rng::seed_from_u64(k))
            } else {
                v
            }
        });
        let first = d.process(&flip(1)).unwrap();
        assert!(first.a);
        assert_eq!(first.status, Status::Ok);
        let second = d.process(&flip(2)).unwrap();
        assert!(second.a);
        assert_eq!(second.status, Status::Anomaly);
    }

    #[test]
    fn skipped_segments_leave_state_alone() {
        let mut d = detector(8);
        d.process(&healthy(0, 8)).unwrap();
        d.process(&healthy(1, 8)).unwrap();
        let before = d.state().unwrap().clone();

        let outage = d.process(&SeriesMatrix::empty(2, M, 8)).unwrap();
        assert_eq!(outage.status, Status::SkippedInsufficientData);
        assert_eq!(outage.excluded_channels, (0..8).collect::<Vec<_>>());
        assert_eq!(d.state().unwrap(), &before);

        let flat = d.process(&segment_with(3, 8, |ch, _, _| 25.0 + ch as f64 * 0.01)).unwrap();
        assert_eq!(flat.status, Status::SkippedNoDynamics);
        assert_eq!(d.state().unwrap(), &before);

        let after = d.process(&healthy(4, 8)).unwrap();
        assert_eq!(after.status, Status::Ok);
        assert_eq!(after.k, 4);
        assert_eq!(d.state().unwrap().k, 2);
    }

    #[test]
    fn out_of_range_channel_is_excluded_and_keeps_its_label() {
        let mut d = detector(8);
        let reference = d.process(&healthy(0, 8)).unwrap();
        let seg = segment_with(1, 8, |ch, t, v| if ch == 5 && t < 10 { 150.0 } else { v });
        let v = d.process(&seg).unwrap();
        assert_eq!(v.excluded_channels, vec![5]);
        assert_eq!(v.mem[5], reference.mem[5]);
        assert_eq!(v.status, Status::Ok);
    }

    #[test]
    fn skipped_before_reference_waits_for_a_usable_segment() {
        let mut d = detector(8);
        let v = d.process(&SeriesMatrix::empty(0, M, 8)).unwrap();
        assert_eq!(v.status, Status::SkippedInsufficientData);
        assert!(d.reference().is_none());
        assert_eq!(d.process(&healthy(1, 8)).unwrap().status, Status::Reference);
        d.reestablish();
        assert_eq!(d.process(&healthy(2, 8)).unwrap().status, Status::Reference);
    }

    #[test]
    fn too_many_clusters_is_rejected() {
        let cfg = DetectorConfig { cluster_count: Some(9), ..DetectorConfig::default() };
        assert!(Detector::new(cfg, ranges(8)).is_err());
        let cfg = DetectorConfig { alpha: 1.5, ..DetectorConfig::default() };
        assert!(Detector::new(cfg, ranges(8)).is_err());
    }

    #[test]
    fn constant_channels_cannot_form_a_reference() {
        let prepared = PreparedSegment {
            index: 0,
            channel_count: 3,
            series: (0..3).map(|i| NormalizedSeries::zeros(M, i)).collect(),
            excluded: Vec::new(),
        };
        assert!(establish_reference(&prepared, &DetectorConfig::default()).is_err());
    }

    #[test]
    fn saved_reference_resumes_detection() {
        let mut d = detector(8);
        d.process(&healthy(0, 8)).unwrap();
        let reference = d.reference().unwrap().clone();
        let json = serde_json::to_string(&reference).unwrap();
        let back: ReferenceModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, reference);
        let mut resumed = Detector::with_reference(DetectorConfig::default(), ranges(8), back).unwrap();
        let mut original = d;
        let a = original.process(&healthy(1, 8)).unwrap();
        let b = resumed.process(&healthy(1, 8)).unwrap();
        assert_eq!(a, b);
        assert!(Detector::with_reference(DetectorConfig::default(), ranges(7), reference).is_err());
    }
}

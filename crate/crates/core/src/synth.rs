//! Synthetic pack telemetry for self-contained experiments.
//!
//! Every scenario has two channel families (even and odd channel indices)
//! driven by a repeating load cycle. Family A heats up mid-cycle, family B
//! at the cycle edges. Each channel adds a small fixed harmonic of order 1 to
//! 3 with its own phase, plus its own gain, offset and white sensor noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ingest::{TelemetryRecord, DEFAULT_PERIOD_SECS};

/// Over-temperature limit used by conventional threshold rules.
pub const OVER_TEMPERATURE_LIMIT: f64 = 55.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// One channel ramps away from its family after an onset sample.
    Case1Runaway,
    /// Two packs whose temperature gap widens during high-load episodes.
    Case2TwoPack,
    Steady,
    /// Steady data with a long transmission outage.
    Outage,
}

impl std::str::FromStr for Scenario {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "case1_runaway" => Ok(Scenario::Case1Runaway),
            "case2_twopack" => Ok(Scenario::Case2TwoPack),
            "steady" => Ok(Scenario::Steady),
            "outage" => Ok(Scenario::Outage),
            other => Err(invalid(format!(
                "unknown scenario '{other}' (expected case1_runaway, case2_twopack, steady or outage)"
            ))),
        }
    }
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Case1Runaway => "case1_runaway",
            Scenario::Case2TwoPack => "case2_twopack",
            Scenario::Steady => "steady",
            Scenario::Outage => "outage",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub scenario: Scenario,
    pub channels: usize,
    /// Number of nominal sample slots to generate.
    pub samples: usize,
    pub seed: u64,
    pub pack_id: String,
    pub start_timestamp: f64,
    pub period: f64,
    /// Maximum timestamp jitter in whole seconds.
    pub jitter_secs: u32,
    /// Samples per load cycle.
    pub cycle_len: usize,
    /// Cycle amplitude in degrees.
    pub amplitude: f64,
    /// Strength of each channel's own harmonic, relative to the amplitude.
    pub harmonic: f64,
    /// Half-width of the uniform cycle-to-cycle amplitude scale.
    pub cycle_jitter: f64,
    /// Sensor noise standard deviation in degrees.
    pub noise: f64,
    /// Divergence onset sample (case1).
    pub onset: usize,
    /// Divergence slope in degrees per sample (case1).
    pub slope: f64,
    /// Diverging channel (case1).
    pub diverging_channel: usize,
    /// Peak family-A temperature rise during a load episode (case2).
    pub episode_rise: f64,
    /// Episode length in samples (case2).
    pub episode_len: usize,
    /// Fraction of records lost at random.
    pub dropout: f64,
    /// `(start, length)` in samples of a window with no records at all.
    pub outage: Option<(usize, usize)>,
    /// `(channel, slots)`: the channel reports values this many slots late.
    pub delay: Option<(usize, usize)>,
}

impl ScenarioParams {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        let (channels, samples) = match scenario {
            Scenario::Case1Runaway => (16, 2500),
            Scenario::Case2TwoPack => (8, 5000),
            Scenario::Steady | Scenario::Outage => (16, 5000),
        };
        Self {
            scenario,
            channels,
            samples,
            seed,
            pack_id: "P1".to_string(),
            start_timestamp: 1_635_552_000.0,
            period: DEFAULT_PERIOD_SECS,
            jitter_secs: 2,
            cycle_len: 25,
            amplitude: 0.5,
            harmonic: 0.1,
            cycle_jitter: 0.15,
            noise: 0.01,
            onset: 1000,
            slope: 0.02,
            diverging_channel: 12,
            episode_rise: 8.0,
            episode_len: 1200,
            dropout: 0.0,
            outage: (scenario == Scenario::Outage).then_some((samples * 2 / 5, 720)),
            delay: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels < 2 {
            return Err(invalid("need at least 2 channels"));
        }
        if self.samples == 0 || self.cycle_len < 4 {
            return Err(invalid("samples must be positive and cycle_len at least 4"));
        }
        if !(0.0..1.0).contains(&self.cycle_jitter) {
            return Err(invalid("cycle_jitter must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid("dropout must lie in [0, 1)"));
        }
        if self.scenario == Scenario::Case1Runaway && self.diverging_channel >= self.channels {
            return Err(invalid("diverging channel out of range"));
        }
        if let Some((ch, _)) = self.delay {
            if ch >= self.channels {
                return Err(invalid("delayed channel out of range"));
            }
        }
        if !(self.period > 0.0) || f64::from(self.jitter_secs) * 2.0 >= self.period {
            return Err(invalid("jitter must stay below half the period"));
        }
        Ok(())
    }
}

/// Ground truth written next to a generated file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario: Scenario,
    pub seed: u64,
    pub families: Vec<Vec<usize>>,
    pub onset_sample: Option<usize>,
    pub onset_timestamp: Option<f64>,
    pub diverging_channel: Option<usize>,
    /// First sample at which the diverging channel exceeds the
    /// over-temperature limit.
    pub limit_crossing_sample: Option<usize>,
    pub outage: Option<(usize, usize)>,
    /// Slots at which the hottest-minus-coldest spread exceeds
    /// [`SPREAD_LIMIT`] (before dropout).
    pub spread_alarm_samples: usize,
}

/// Spread threshold of a naive max-minus-min rule.
pub const SPREAD_LIMIT: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub records: Vec<TelemetryRecord>,
    pub truth: GroundTruth,
}

/// Raised-cosine bump on `[start, start + len)`, peak 1.
fn bump(t: f64, start: f64, len: f64) -> f64 {
    if t < start || t >= start + len {
        0.0
    } else {
        0.5 * (1.0 - (2.0 * PI * (t - start) / len).cos())
    }
}

struct ChannelProfile {
    family: usize,
    base: f64,
    gain: f64,
    harmonic_order: f64,
    harmonic_phase: f64,
}

pub fn generate(params: &ScenarioParams) -> Result<Synthetic> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let noise = Normal::new(0.0, params.noise.max(0.0)).map_err(|e| invalid(e.to_string()))?;
    let n = params.channels;
    let l = params.cycle_len as f64;

    let profiles: Vec<ChannelProfile> = (0..n)
        .map(|ch| {
            let family = ch % 2;
            ChannelProfile {
                family,
                base: if family == 0 { 32.0 } else { 28.0 } + rng.random_range(-0.5..0.5),
                gain: rng.random_range(0.9..1.1),
                harmonic_order: [1.0, 2.0, 3.0][(ch / 2) % 3],
                harmonic_phase: rng.random_range(0.0..2.0 * PI),
            }
        })
        .collect();
    let cycles = params.samples / params.cycle_len + 2;
    let jitter = params.cycle_jitter;
    let cycle_scale: Vec<f64> =
        (0..cycles).map(|_| if jitter > 0.0 { rng.random_range(1.0 - jitter..1.0 + jitter) } else { 1.0 }).collect();

    let episodes: Vec<f64> = if params.scenario == Scenario::Case2TwoPack {
        vec![params.samples as f64 * 0.15, params.samples as f64 * 0.6]
    } else {
        Vec::new()
    };
    let load = |t: f64| episodes.iter().map(|&s| bump(t, s, params.episode_len as f64)).sum::<f64>();

    let clean = |ch: usize, t: i64| -> f64 {
        let p = &profiles[ch];
        let len = params.cycle_len as i64;
        let tau = t.rem_euclid(len) as f64;
        // Index shifted by one so a delayed channel can look before t = 0.
        let scale = cycle_scale[(t.div_euclid(len) + 1).max(0) as usize];
        // Symmetric about the window centre, so a slow load ramp adds
        // variance without bending the shape.
        let phase = 2.0 * PI * (tau - (l - 1.0) / 2.0) / l;
        let shape = if p.family == 0 { phase.cos() } else { -phase.cos() };
        let harmonic = params.harmonic * (2.0 * PI * p.harmonic_order * tau / l + p.harmonic_phase).sin();
        let mut response = params.amplitude * scale * (shape + harmonic);
        if params.scenario == Scenario::Case2TwoPack {
            let share = if p.family == 0 { 1.0 } else { 0.25 };
            response += share * params.episode_rise * load(t as f64);
        }
        let mut v = p.base + p.gain * response;
        if params.scenario == Scenario::Case1Runaway && ch == params.diverging_channel && t >= params.onset as i64 {
            v += params.slope * (t - params.onset as i64) as f64;
        }
        v
    };

    let mut records = Vec::with_capacity(params.samples);
    let mut crossing = None;
    let mut spread_alarms = 0;
    for t in 0..params.samples {
        let temps: Vec<f64> = (0..n)
            .map(|ch| {
                let lag = params.delay.filter(|(c, _)| *c == ch).map_or(0, |(_, d)| d as i64);
                clean(ch, t as i64 - lag) + noise.sample(&mut rng)
            })
            .collect();
        if params.scenario == Scenario::Case1Runaway
            && crossing.is_none()
            && temps[params.diverging_channel] > OVER_TEMPERATURE_LIMIT
        {
            crossing = Some(t);
        }
        let hi = temps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = temps.iter().cloned().fold(f64::INFINITY, f64::min);
        if hi - lo > SPREAD_LIMIT {
            spread_alarms += 1;
        }

        let tau = (t % params.cycle_len) as f64;
        let current = 60.0 + 40.0 * (2.0 * PI * (tau - (l - 1.0) / 2.0) / l).cos() + 250.0 * load(t as f64);
        let jitter = if params.jitter_secs > 0 {
            rng.random_range(-(params.jitter_secs as i64)..=params.jitter_secs as i64) as f64
        } else {
            0.0
        };
        let dropped = rng.random::<f64>() < params.dropout;
        let volts: Vec<Option<f64>> =
            (0..n).map(|_| Some(round_to(3.3 - 0.0005 * current + 0.002 * noise.sample(&mut rng), 4))).collect();
        if dropped || params.outage.is_some_and(|(s, len)| t >= s && t < s + len) {
            continue;
        }
        records.push(TelemetryRecord {
            timestamp: params.start_timestamp + t as f64 * params.period + jitter,
            pack_id: params.pack_id.clone(),
            cell_voltages: volts,
            temperatures: temps.iter().map(|v| Some(round_to(*v, 3))).collect(),
            pack_current: Some(round_to(current, 2)),
            battery_fault: false,
            battery_status: if current > 150.0 { "HIGH_LOAD" } else { "DISCHARGE" }.to_string(),
        });
    }

    let case1 = params.scenario == Scenario::Case1Runaway;
    let truth = GroundTruth {
        scenario: params.scenario,
        seed: params.seed,
        families: vec![(0..n).step_by(2).collect(), (1..n).step_by(2).collect()],
        onset_sample: case1.then_some(params.onset),
        onset_timestamp: case1.then_some(params.start_timestamp + params.onset as f64 * params.period),
        diverging_channel: case1.then_some(params.diverging_channel),
        limit_crossing_sample: crossing,
        outage: params.outage,
        spread_alarm_samples: spread_alarms,
    };
    Ok(Synthetic { records, truth })
}

fn round_to(v: f64, digits: i32) -> f64 {
    let f = 10f64.powi(digits);
    (v * f).round() / f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let p = ScenarioParams::new(Scenario::Steady, 9);
        let a = generate(&p).unwrap();
        let b = generate(&p).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn case1_onset_and_crossing() {
        let p = ScenarioParams::new(Scenario::Case1Runaway, 1);
        let s = generate(&p).unwrap();
        assert_eq!(s.truth.onset_sample, Some(1000));
        let cross = s.truth.limit_crossing_sample.expect("ramp reaches the limit");
        assert!(cross > 1000 && cross < p.samples);
    }

    #[test]
    fn outage_removes_rows() {
        let p = ScenarioParams::new(Scenario::Outage, 2);
        let s = generate(&p).unwrap();
        assert_eq!(s.records.len(), p.samples - 720);
    }

    #[test]
    fn case2_families() {
        let s = generate(&ScenarioParams::new(Scenario::Case2TwoPack, 3)).unwrap();
        assert_eq!(s.truth.families, vec![vec![0, 2, 4, 6], vec![1, 3, 5, 7]]);
        assert!(s.truth.spread_alarm_samples > 0);
    }

    #[test]
    fn unknown_scenario() {
        assert!("case3".parse::<Scenario>().is_err());
    }
}

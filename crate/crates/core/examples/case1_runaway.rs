//! One cell heats up on its own. Compares the first shape anomaly with a
//! fixed over-temperature limit and a max-minus-min spread rule.

use thermshape::detector::{DetectorConfig, Status};
use thermshape::pipeline::detect_records;
use thermshape::synth::{generate, Scenario, ScenarioParams};

fn main() -> thermshape::Result<()> {
    let params = ScenarioParams::new(Scenario::Case1Runaway, 3);
    let data = generate(&params)?;
    let truth = &data.truth;
    let seg = DetectorConfig::default().segment_size;
    let verdicts = detect_records(&data.records, &DetectorConfig::default())?;

    println!("diverging channel {:?}, onset at sample {:?}", truth.diverging_channel, truth.onset_sample);
    match verdicts.iter().find(|v| v.status == Status::Anomaly) {
        Some(v) => println!(
            "first anomaly in segment {} (samples {}..{}), channels {:?}, p = {:.2}",
            v.k,
            v.k as usize * seg,
            (v.k as usize + 1) * seg,
            v.offending_channels,
            v.p
        ),
        None => println!("no anomaly raised"),
    }
    println!("over-temperature limit crossed at sample {:?}", truth.limit_crossing_sample);
    println!("spread rule fired on {} samples", truth.spread_alarm_samples);
    Ok(())
}

//! Two families of cells with different thermal response. A spread rule
//! alarms during load episodes; the shape detector does not.

use std::collections::BTreeMap;

use thermshape::detector::DetectorConfig;
use thermshape::pipeline::detect_records;
use thermshape::synth::{generate, Scenario, ScenarioParams};

fn main() -> thermshape::Result<()> {
    let data = generate(&ScenarioParams::new(Scenario::Case2TwoPack, 5))?;
    let verdicts = detect_records(&data.records, &DetectorConfig::default())?;

    let mut counts = BTreeMap::new();
    for v in &verdicts {
        *counts.entry(v.status.as_str()).or_insert(0) += 1;
    }
    println!("true families   {:?}", data.truth.families);
    println!("final clusters  {:?}", verdicts.last().map(|v| &v.mem));
    println!("verdicts        {counts:?}");
    println!("spread rule fired on {} samples", data.truth.spread_alarm_samples);
    Ok(())
}

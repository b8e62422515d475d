//! Runaway cell with 30% of records lost and a two-hour transmission gap.

use thermshape::detector::{DetectorConfig, Status};
use thermshape::pipeline::detect_records;
use thermshape::synth::{generate, Scenario, ScenarioParams};

fn main() -> thermshape::Result<()> {
    let mut params = ScenarioParams::new(Scenario::Case1Runaway, 11);
    params.samples = 3000;
    params.onset = 1500;
    params.dropout = 0.3;
    params.outage = Some((400, 720));
    let data = generate(&params)?;
    println!("{} of {} records survived", data.records.len(), params.samples);

    let verdicts = detect_records(&data.records, &DetectorConfig::default())?;
    let mut run: Option<(Status, u64, u64)> = None;
    for v in &verdicts {
        match &mut run {
            Some((s, _, end)) if *s == v.status => *end = v.k,
            _ => {
                if let Some((s, a, b)) = run.take() {
                    println!("segments {a:>3}..={b:<3} {}", s.as_str());
                }
                run = Some((v.status, v.k, v.k));
            }
        }
    }
    if let Some((s, a, b)) = run {
        println!("segments {a:>3}..={b:<3} {}", s.as_str());
    }
    println!("onset segment {}", params.onset / DetectorConfig::default().segment_size);
    Ok(())
}

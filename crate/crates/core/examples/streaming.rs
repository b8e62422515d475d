//! Record-at-a-time processing of two interleaved packs, with slightly
//! shuffled arrival order absorbed by the reorder window.

use std::collections::BTreeMap;

use thermshape::detector::{DetectorConfig, Status};
use thermshape::pipeline::{PipelineOptions, Session};
use thermshape::synth::{generate, Scenario, ScenarioParams};

fn main() -> thermshape::Result<()> {
    let mut a = ScenarioParams::new(Scenario::Steady, 1);
    a.samples = 1500;
    a.pack_id = "PACK-A".into();
    let mut b = ScenarioParams::new(Scenario::Case1Runaway, 2);
    b.samples = 1500;
    b.onset = 600;
    b.pack_id = "PACK-B".into();

    let mut records: Vec<_> = generate(&a)?.records.into_iter().chain(generate(&b)?.records).collect();
    records.sort_by(|x, y| x.timestamp.total_cmp(&y.timestamp));
    // Swap neighbours so some records arrive out of order.
    for i in (0..records.len() - 1).step_by(7) {
        records.swap(i, i + 1);
    }

    let mut session = Session::new(DetectorConfig::default(), PipelineOptions::default(), BTreeMap::new())?;
    let mut anomalies: BTreeMap<String, usize> = BTreeMap::new();
    for record in &records {
        for v in session.push(record)? {
            if v.verdict.status == Status::Anomaly {
                let n = anomalies.entry(v.pack_id.clone()).or_default();
                if *n == 0 {
                    println!("{} segment {}: first anomaly, channels {:?}", v.pack_id, v.verdict.k, v.verdict.offending_channels);
                }
                *n += 1;
            }
        }
    }
    let (tail, packs, stats) = session.finish()?;
    println!("{} verdicts flushed at end of input", tail.len());
    for pack in &packs {
        let n = anomalies.get(&pack.pack_id).copied().unwrap_or(0);
        println!("{}: grid origin {:?}, {n} anomalous segments", pack.pack_id, pack.origin);
    }
    println!("{stats:?}");
    Ok(())
}

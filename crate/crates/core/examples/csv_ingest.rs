//! Parses a telemetry file and runs the detector on it.
//!
//! `cargo run --example csv_ingest -- crates/core/data/sample.csv`

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use thermshape::detector::DetectorConfig;
use thermshape::ingest::{parse_records, Format};
use thermshape::pipeline::detect_records;

fn main() -> thermshape::Result<()> {
    let path = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/sample.csv"));
    let format = Format::from_path(&path);
    let mut reader = parse_records(BufReader::new(File::open(&path)?), format)?;
    let mut records = Vec::new();
    while let Some(r) = reader.next_record()? {
        records.push(r);
    }
    println!("{} records, {} malformed lines", records.len(), reader.malformed());
    if let Some(first) = records.first() {
        println!("pack {} with {} temperature channels", first.pack_id, first.temperatures.len());
    }
    for v in detect_records(&records, &DetectorConfig::default())? {
        println!("segment {:>3}  {:<24} p = {:.3}", v.k, v.status.as_str(), v.p);
    }
    Ok(())
}

//! Telemetry records, CSV/JSONL parsing and snapping onto the nominal
//! sampling grid.
//!
//! CSV layout: `timestamp,pack_id,t01..tNN,v01..vMM,current,fault,status`.
//! An empty cell is a missing measurement; any other unparsable cell makes
//! the whole row malformed. JSONL carries one [`TelemetryRecord`] per line
//! with `null` for missing measurements.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nominal sampling period in seconds (about 0.1 Hz).
pub const DEFAULT_PERIOD_SECS: f64 = 10.0;
/// How far behind the newest timestamp a record may arrive and still be used.
pub const DEFAULT_REORDER_SECS: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Temperature,
    Voltage,
    Current,
}

/// Open interval `(low, high)`; the bounds themselves are sensor sentinels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidRange {
    pub low: f64,
    pub high: f64,
}

impl ValidRange {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low < high) {
            return Err(Error::InvalidInput(format!("empty range ({low}, {high})")));
        }
        Ok(Self { low, high })
    }

    pub fn contains(&self, v: f64) -> bool {
        v > self.low && v < self.high
    }
}

impl ChannelKind {
    pub fn default_range(self) -> ValidRange {
        match self {
            ChannelKind::Temperature => ValidRange { low: -50.0, high: 100.0 },
            ChannelKind::Voltage => ValidRange { low: 0.0, high: 5.0 },
            ChannelKind::Current => ValidRange { low: -500.0, high: 500.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub channel_id: usize,
    pub kind: ChannelKind,
    pub valid_range: ValidRange,
    pub nominal_period: f64,
}

impl ChannelSpec {
    pub fn new(channel_id: usize, kind: ChannelKind) -> Self {
        Self { channel_id, kind, valid_range: kind.default_range(), nominal_period: DEFAULT_PERIOD_SECS }
    }

    pub fn temperatures(count: usize) -> Vec<ChannelSpec> {
        (0..count).map(|i| ChannelSpec::new(i, ChannelKind::Temperature)).collect()
    }
}

/// One telemetry row from a pack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    /// Epoch seconds.
    pub timestamp: f64,
    pub pack_id: String,
    pub cell_voltages: Vec<Option<f64>>,
    pub temperatures: Vec<Option<f64>>,
    pub pack_current: Option<f64>,
    pub battery_fault: bool,
    /// Opaque BMS status string.
    pub battery_status: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "ndjson" => Ok(Format::Jsonl),
            other => Err(Error::InvalidInput(format!("unknown format '{other}'"))),
        }
    }
}

impl Format {
    /// Guesses the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("jsonl") || ext.eq_ignore_ascii_case("ndjson") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

#[derive(Debug, Clone)]
struct CsvLayout {
    timestamp: usize,
    pack_id: usize,
    temperatures: Vec<usize>,
    voltages: Vec<usize>,
    current: usize,
    fault: usize,
    status: usize,
    width: usize,
}

impl CsvLayout {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::Format(format!("header is missing the '{name}' column")))
        };
        let numbered = |prefix: char| {
            let mut cols: Vec<(u32, usize)> = header
                .iter()
                .enumerate()
                .filter_map(|(i, h)| {
                    let h = h.trim();
                    let rest = h.strip_prefix(prefix).or_else(|| h.strip_prefix(prefix.to_ascii_uppercase()))?;
                    rest.parse::<u32>().ok().map(|n| (n, i))
                })
                .collect();
            cols.sort();
            cols.into_iter().map(|(_, i)| i).collect::<Vec<_>>()
        };
        let layout = CsvLayout {
            timestamp: find("timestamp")?,
            pack_id: find("pack_id")?,
            temperatures: numbered('t'),
            voltages: numbered('v'),
            current: find("current")?,
            fault: find("fault")?,
            status: find("status")?,
            width: header.len(),
        };
        if layout.temperatures.is_empty() {
            return Err(Error::Format("header has no temperature columns (t01..tNN)".into()));
        }
        Ok(layout)
    }

    fn parse(&self, row: &csv::StringRecord) -> Option<TelemetryRecord> {
        if row.len() != self.width {
            return None;
        }
        let opt = |i: usize| -> Option<Option<f64>> {
            let cell = row.get(i)?.trim();
            if cell.is_empty() {
                Some(None)
            } else {
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some)
            }
        };
        let timestamp = row.get(self.timestamp)?.trim().parse::<f64>().ok().filter(|t| t.is_finite())?;
        let pack_id = row.get(self.pack_id)?.trim().to_string();
        if pack_id.is_empty() {
            return None;
        }
        let temperatures = self.temperatures.iter().map(|&i| opt(i)).collect::<Option<Vec<_>>>()?;
        let cell_voltages = self.voltages.iter().map(|&i| opt(i)).collect::<Option<Vec<_>>>()?;
        let pack_current = opt(self.current)?;
        let battery_fault = match row.get(self.fault)?.trim() {
            "0" | "false" | "False" | "FALSE" | "" => false,
            "1" | "true" | "True" | "TRUE" => true,
            _ => return None,
        };
        let battery_status = row.get(self.status)?.trim().to_string();
        Some(TelemetryRecord {
            timestamp,
            pack_id,
            cell_voltages,
            temperatures,
            pack_current,
            battery_fault,
            battery_status,
        })
    }
}

enum Source<R: BufRead> {
    Csv { reader: csv::Reader<R>, layout: CsvLayout, row: csv::StringRecord },
    Jsonl { reader: R, line: String },
}

/// Streaming record parser. Malformed rows are skipped and counted.
pub struct RecordReader<R: BufRead> {
    source: Source<R>,
    malformed: u64,
}

/// Opens a record stream. For CSV the header is read immediately; an
/// unreadable header is a [`Error::Format`].
pub fn parse_records<R: BufRead>(input: R, format: Format) -> Result<RecordReader<R>> {
    let source = match format {
        Format::Csv => {
            let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
            let header = reader.headers().map_err(|e| Error::Format(format!("unreadable header: {e}")))?.clone();
            if header.is_empty() {
                return Err(Error::Format("empty input, no header".into()));
            }
            let layout = CsvLayout::from_header(&header)?;
            Source::Csv { reader, layout, row: csv::StringRecord::new() }
        }
        Format::Jsonl => Source::Jsonl { reader: input, line: String::new() },
    };
    Ok(RecordReader { source, malformed: 0 })
}

impl<R: BufRead> RecordReader<R> {
    pub fn malformed(&self) -> u64 {
        self.malformed
    }

    /// Next well-formed record; I/O errors end the stream with an error.
    pub fn next_record(&mut self) -> Result<Option<TelemetryRecord>> {
        loop {
            match &mut self.source {
                Source::Csv { reader, layout, row } => match reader.read_record(row) {
                    Ok(false) => return Ok(None),
                    Ok(true) => match layout.parse(row) {
                        Some(rec) => return Ok(Some(rec)),
                        None => self.malformed += 1,
                    },
                    Err(e) if e.is_io_error() => return Err(e.into()),
                    Err(_) => self.malformed += 1,
                },
                Source::Jsonl { reader, line } => {
                    line.clear();
                    if reader.read_line(line)? == 0 {
                        return Ok(None);
                    }
                    if line.trim().is_empty() {
                        continue;
                    }
                    match serde_json::from_str::<TelemetryRecord>(line) {
                        Ok(rec) if rec.timestamp.is_finite() && !rec.pack_id.is_empty() => return Ok(Some(rec)),
                        _ => self.malformed += 1,
                    }
                }
            }
        }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<TelemetryRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_record().transpose()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV header for the given channel counts.
pub fn csv_header(temperatures: usize, voltages: usize) -> Vec<String> {
    let mut h = vec!["timestamp".to_string(), "pack_id".to_string()];
    h.extend((1..=temperatures).map(|i| format!("t{i:02}")));
    h.extend((1..=voltages).map(|i| format!("v{i:02}")));
    h.extend(["current", "fault", "status"].map(String::from));
    h
}

/// Writes records as CSV. Floats use the shortest representation that
/// parses back to the same bits.
pub fn write_csv<W: Write>(records: &[TelemetryRecord], out: W) -> Result<()> {
    let temps = records.first().map_or(0, |r| r.temperatures.len());
    let volts = records.first().map_or(0, |r| r.cell_voltages.len());
    let mut w = csv::WriterBuilder::new().from_writer(out);
    w.write_record(csv_header(temps, volts))?;
    for r in records {
        if r.temperatures.len() != temps || r.cell_voltages.len() != volts {
            return Err(Error::InvalidInput("records disagree on channel counts".into()));
        }
        let mut row = vec![r.timestamp.to_string(), r.pack_id.clone()];
        row.extend(r.temperatures.iter().map(|v| fmt_opt(*v)));
        row.extend(r.cell_voltages.iter().map(|v| fmt_opt(*v)));
        row.push(fmt_opt(r.pack_current));
        row.push(if r.battery_fault { "1" } else { "0" }.to_string());
        row.push(r.battery_status.clone());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<W: Write>(records: &[TelemetryRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// One nominal sampling slot with the temperatures that landed in it.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub slot: u64,
    pub temperatures: Vec<Option<f64>>,
}

/// A single temperature sample on the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSample {
    pub channel: usize,
    pub slot: u64,
    pub value: f64,
}

/// Snaps one pack's records onto slots of the nominal period.
///
/// The grid origin is the first record's timestamp; each record goes to the
/// nearest slot. Records are held until the newest timestamp is more than the
/// reorder window past their slot, then released in slot order. Anything
/// arriving later than that is dropped and counted. Within a slot the last
/// arriving value for a channel wins.
#[derive(Debug, Clone)]
pub struct SlotSnapper {
    period: f64,
    reorder: f64,
    channels: usize,
    origin: Option<f64>,
    newest: f64,
    pending: BTreeMap<u64, Vec<Option<f64>>>,
    next_release: u64,
    late_dropped: u64,
}

impl SlotSnapper {
    pub fn new(channels: usize, period: f64, reorder: f64) -> Result<Self> {
        if !(period > 0.0) || !(reorder >= 0.0) {
            return Err(Error::InvalidInput("period must be positive and reorder window non-negative".into()));
        }
        Ok(Self {
            period,
            reorder,
            channels,
            origin: None,
            newest: f64::NEG_INFINITY,
            pending: BTreeMap::new(),
            next_release: 0,
            late_dropped: 0,
        })
    }

    pub fn origin(&self) -> Option<f64> {
        self.origin
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn late_dropped(&self) -> u64 {
        self.late_dropped
    }

    /// Slot index for a timestamp relative to the origin, if non-negative.
    pub fn slot_of(&self, timestamp: f64) -> Option<u64> {
        let origin = self.origin?;
        let s = ((timestamp - origin) / self.period).round();
        (s >= 0.0).then_some(s as u64)
    }

    /// Feeds one record's temperatures; returns rows that became final.
    pub fn push(&mut self, timestamp: f64, temperatures: &[Option<f64>]) -> Result<Vec<GridRow>> {
        if temperatures.len() != self.channels {
            return Err(Error::InvalidInput(format!(
                "record has {} temperatures, expected {}",
                temperatures.len(),
                self.channels
            )));
        }
        if self.origin.is_none() {
            self.origin = Some(timestamp);
        }
        let slot = match self.slot_of(timestamp) {
            Some(s) if s >= self.next_release && timestamp >= self.newest - self.reorder => s,
            _ => {
                self.late_dropped += 1;
                return Ok(Vec::new());
            }
        };
        let row = self.pending.entry(slot).or_insert_with(|| vec![None; self.channels]);
        for (dst, src) in row.iter_mut().zip(temperatures) {
            if src.is_some() {
                *dst = *src;
            }
        }
        self.newest = self.newest.max(timestamp);
        Ok(match self.watermark() {
            Some(w) => self.release_through(Some(w)),
            None => Vec::new(),
        })
    }

    /// Releases everything still buffered.
    pub fn finish(&mut self) -> Vec<GridRow> {
        self.release_through(None)
    }

    /// Highest slot that can no longer receive data.
    fn watermark(&self) -> Option<u64> {
        let origin = self.origin?;
        let cutoff = self.newest - self.reorder;
        // A record at `ts >= cutoff` snaps to slot >= round((cutoff - origin)/period);
        // everything strictly below that slot is final.
        let s = ((cutoff - origin) / self.period).round();
        if s < 1.0 {
            None
        } else {
            Some(s as u64 - 1)
        }
    }

    fn release_through(&mut self, upto: Option<u64>) -> Vec<GridRow> {
        let mut out = Vec::new();
        while let Some((&slot, _)) = self.pending.first_key_value() {
            if upto.is_some_and(|u| slot > u) {
                break;
            }
            let temps = self.pending.remove(&slot).expect("key exists");
            out.push(GridRow { slot, temperatures: temps });
        }
        if let Some(last) = out.last() {
            self.next_release = last.slot + 1;
        }
        if let Some(u) = upto {
            self.next_release = self.next_release.max(u + 1);
        }
        out
    }
}

/// Batch form of [`SlotSnapper`]: every temperature sample of one pack's
/// records placed on the grid, plus the number of late records dropped.
pub fn to_channel_samples(
    records: &[TelemetryRecord],
    specs: &[ChannelSpec],
    reorder_secs: f64,
) -> Result<(Vec<ChannelSample>, u64)> {
    let period = specs.first().map_or(DEFAULT_PERIOD_SECS, |s| s.nominal_period);
    let mut snapper = SlotSnapper::new(specs.len(), period, reorder_secs)?;
    let mut rows = Vec::new();
    for r in records {
        rows.extend(snapper.push(r.timestamp, &r.temperatures)?);
    }
    rows.extend(snapper.finish());
    let samples = rows
        .into_iter()
        .flat_map(|row| {
            row.temperatures
                .into_iter()
                .enumerate()
                .filter_map(move |(channel, v)| v.map(|value| ChannelSample { channel, slot: row.slot, value }))
        })
        .collect();
    Ok((samples, snapper.late_dropped()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "timestamp,pack_id,t01,t02,v01,v02,current,fault,status\n";

    fn read_all(text: &str, format: Format) -> (Vec<TelemetryRecord>, u64) {
        let mut reader = parse_records(text.as_bytes(), format).unwrap();
        let records: Vec<_> = reader.by_ref().collect::<Result<_>>().unwrap();
        (records, reader.malformed())
    }

    fn temps(v: &[f64]) -> Vec<Option<f64>> {
        v.iter().copied().map(Some).collect()
    }

    #[test]
    fn parses_a_plain_row() {
        let text = format!("{HEADER}1635571200,P1,25.0,25.1,3.71,3.72,120.5,0,DISCHARGE\n");
        let (records, malformed) = read_all(&text, Format::Csv);
        assert_eq!(malformed, 0);
        assert_eq!(records.len(), 1);
        let r = &records[0];
        assert_eq!(r.timestamp, 1_635_571_200.0);
        assert_eq!(r.pack_id, "P1");
        assert_eq!(r.temperatures, temps(&[25.0, 25.1]));
        assert_eq!(r.cell_voltages, temps(&[3.71, 3.72]));
        assert_eq!(r.pack_current, Some(120.5));
        assert!(!r.battery_fault);
        assert_eq!(r.battery_status, "DISCHARGE");
    }

    #[test]
    fn non_numeric_temperature_is_skipped_and_counted() {
        let text = format!(
            "{HEADER}0,P1,25.0,hot,3.7,3.7,1,0,OK\n10,P1,25.0,25.0,3.7,3.7,1,0,OK\n20,P1,1,2,3\n"
        );
        let (records, malformed) = read_all(&text, Format::Csv);
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].timestamp, 10.0);
        assert_eq!(malformed, 2);
    }

    #[test]
    fn empty_cell_is_a_missing_measurement() {
        let text = format!("{HEADER}0,P1,,25.0,3.7,,1,true,OK\n");
        let (records, _) = read_all(&text, Format::Csv);
        assert_eq!(records[0].temperatures, vec![None, Some(25.0)]);
        assert_eq!(records[0].cell_voltages, vec![Some(3.7), None]);
        assert!(records[0].battery_fault);
    }

    #[test]
    fn header_only_gives_no_records() {
        let (records, malformed) = read_all(HEADER, Format::Csv);
        assert!(records.is_empty());
        assert_eq!(malformed, 0);
    }

    #[test]
    fn unreadable_header_is_a_format_error() {
        assert!(matches!(parse_records("".as_bytes(), Format::Csv), Err(Error::Format(_))));
        let bad = "time,id,a,b\n1,2,3,4\n";
        assert!(matches!(parse_records(bad.as_bytes(), Format::Csv), Err(Error::Format(_))));
    }

    #[test]
    fn temperature_columns_follow_their_number() {
        let text = "pack_id,t02,timestamp,t01,current,fault,status\nP1,2.0,5,1.0,,0,X\n";
        let (records, _) = read_all(text, Format::Csv);
        assert_eq!(records[0].temperatures, temps(&[1.0, 2.0]));
        assert_eq!(records[0].pack_current, None);
    }

    #[test]
    fn jsonl_round_trip_and_bad_lines() {
        let rec = TelemetryRecord {
            timestamp: 12.5,
            pack_id: "P9".into(),
            cell_voltages: vec![Some(3.6), None],
            temperatures: vec![None, Some(30.25)],
            pack_current: Some(-4.0),
            battery_fault: true,
            battery_status: "CHARGE".into(),
        };
        let mut buf = Vec::new();
        write_jsonl(std::slice::from_ref(&rec), &mut buf).unwrap();
        buf.extend_from_slice(b"\n{not json}\n");
        let (records, malformed) = read_all(std::str::from_utf8(&buf).unwrap(), Format::Jsonl);
        assert_eq!(records, vec![rec]);
        assert_eq!(malformed, 1);
    }

    #[test]
    fn format_from_name_and_path() {
        assert_eq!("CSV".parse::<Format>().unwrap(), Format::Csv);
        assert_eq!("jsonl".parse::<Format>().unwrap(), Format::Jsonl);
        assert!("xml".parse::<Format>().is_err());
        assert_eq!(Format::from_path(std::path::Path::new("a/b.jsonl")), Format::Jsonl);
        assert_eq!(Format::from_path(std::path::Path::new("a/b.txt")), Format::Csv);
    }

    #[test]
    fn range_bounds_are_excluded() {
        let t = ChannelKind::Temperature.default_range();
        assert!(!t.contains(-50.0) && !t.contains(100.0));
        assert!(t.contains(-49.999) && t.contains(99.999));
        let v = ChannelKind::Voltage.default_range();
        assert!(!v.contains(0.0) && !v.contains(5.0) && v.contains(3.7));
        let c = ChannelKind::Current.default_range();
        assert!(!c.contains(-500.0) && !c.contains(500.0) && c.contains(0.0));
        assert!(ValidRange::new(1.0, 1.0).is_err());
    }

    fn record_at(ts: f64, values: &[f64]) -> TelemetryRecord {
        TelemetryRecord {
            timestamp: ts,
            pack_id: "P1".into(),
            cell_voltages: Vec::new(),
            temperatures: temps(values),
            pack_current: None,
            battery_fault: false,
            battery_status: String::new(),
        }
    }

    fn slots(timestamps: &[f64]) -> Vec<u64> {
        let records: Vec<_> = timestamps.iter().map(|&t| record_at(t, &[t])).collect();
        let (samples, late) = to_channel_samples(&records, &ChannelSpec::temperatures(1), DEFAULT_REORDER_SECS).unwrap();
        assert_eq!(late, 0);
        samples.iter().map(|s| s.slot).collect()
    }

    #[test]
    fn exact_grid() {
        assert_eq!(slots(&[0.0, 10.0, 20.0]), vec![0, 1, 2]);
    }

    #[test]
    fn nearest_slot() {
        assert_eq!(slots(&[0.0, 14.0]), vec![0, 1]);
        assert_eq!(slots(&[0.0, 16.0]), vec![0, 2]);
    }

    #[test]
    fn gaps_stay_absent() {
        assert_eq!(slots(&[0.0, 30.0]), vec![0, 3]);
    }

    #[test]
    fn duplicate_slot_last_writer_wins() {
        let records = vec![record_at(0.0, &[1.0, 1.0]), record_at(9.0, &[2.0, 2.0]), {
            let mut r = record_at(11.0, &[3.0, 0.0]);
            r.temperatures[1] = None;
            r
        }];
        let (samples, _) = to_channel_samples(&records, &ChannelSpec::temperatures(2), 60.0).unwrap();
        let slot1: Vec<_> = samples.iter().filter(|s| s.slot == 1).map(|s| (s.channel, s.value)).collect();
        assert_eq!(slot1, vec![(0, 3.0), (1, 2.0)]);
    }

    #[test]
    fn reorder_window_accepts_recent_and_drops_stale() {
        let mut snap = SlotSnapper::new(1, 10.0, 60.0).unwrap();
        let mut rows = Vec::new();
        for t in [0.0, 20.0, 10.0, 100.0, 30.0, 90.0] {
            rows.extend(snap.push(t, &[Some(t)]).unwrap());
        }
        rows.extend(snap.finish());
        let got: Vec<_> = rows.iter().map(|r| r.slot).collect();
        // 30 s arrives after 100 s with a 60 s window: too late.
        assert_eq!(got, vec![0, 1, 2, 9, 10]);
        assert_eq!(snap.late_dropped(), 1);
    }

    #[test]
    fn rows_are_released_in_order_before_finish() {
        let mut snap = SlotSnapper::new(1, 10.0, 20.0).unwrap();
        let mut released = Vec::new();
        for i in 0..10 {
            released.extend(snap.push(i as f64 * 10.0, &[Some(1.0)]).unwrap().into_iter().map(|r| r.slot));
        }
        assert_eq!(released, (0..7).collect::<Vec<u64>>());
        released.extend(snap.finish().into_iter().map(|r| r.slot));
        assert_eq!(released, (0..10).collect::<Vec<u64>>());
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let mut snap = SlotSnapper::new(2, 10.0, 60.0).unwrap();
        assert!(snap.push(0.0, &[Some(1.0)]).is_err());
        assert!(SlotSnapper::new(1, 0.0, 1.0).is_err());
    }

    fn grid(records: &[TelemetryRecord], channels: usize) -> Vec<ChannelSample> {
        to_channel_samples(records, &ChannelSpec::temperatures(channels), DEFAULT_REORDER_SECS).unwrap().0
    }

    prop_compose! {
        fn arb_records(channels: usize)(
            start in 1.0e9..2.0e9f64,
            rows in prop::collection::vec(
                (0u32..4, -3.0..3.0f64, prop::collection::vec(prop::option::weighted(0.8, -60.0..110.0f64), channels)),
                1..40,
            ),
        ) -> Vec<TelemetryRecord> {
            let mut t = start;
            rows.into_iter().map(|(step, jitter, values)| {
                t += 10.0 * step as f64;
                TelemetryRecord {
                    timestamp: t + jitter,
                    pack_id: "P1".into(),
                    cell_voltages: vec![Some(3.7)],
                    temperatures: values,
                    pack_current: Some(1.5),
                    battery_fault: false,
                    battery_status: "OK".into(),
                }
            }).collect()
        }
    }

    proptest! {
        #[test]
        fn csv_round_trip_preserves_grid(records in arb_records(3)) {
            let mut buf = Vec::new();
            write_csv(&records, &mut buf).unwrap();
            let (back, malformed) = read_all(std::str::from_utf8(&buf).unwrap(), Format::Csv);
            prop_assert_eq!(malformed, 0);
            prop_assert_eq!(&back, &records);
            let a = grid(&records, 3);
            let b = grid(&back, 3);
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!((x.channel, x.slot, x.value.to_bits()), (y.channel, y.slot, y.value.to_bits()));
            }
        }

        #[test]
        fn jsonl_round_trip_preserves_records(records in arb_records(2)) {
            let mut buf = Vec::new();
            write_jsonl(&records, &mut buf).unwrap();
            let (back, _) = read_all(std::str::from_utf8(&buf).unwrap(), Format::Jsonl);
            prop_assert_eq!(back, records);
        }

        #[test]
        fn temperature_validity_is_the_open_interval(v in -200.0..200.0f64) {
            let r = ChannelKind::Temperature.default_range();
            prop_assert_eq!(r.contains(v), -50.0 < v && v < 100.0);
        }
    }
}

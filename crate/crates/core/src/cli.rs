//! Command-line front end.
//!
//! Exit codes: 0 when no segment was flagged, 2 when at least one `Anomaly`
//! verdict was written, 1 on runtime errors and 64 on usage errors (bad flags,
//! inconsistent configuration).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufRead, BufReader, Cursor, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{DetectorConfig, ReferenceModel, Status};
use crate::error::{Error, Result};
use crate::ingest::{parse_records, write_csv, write_jsonl, Format, DEFAULT_PERIOD_SECS, DEFAULT_REORDER_SECS};
use crate::pipeline::{FinishedPack, PackVerdict, PipelineOptions, Session, SessionStats};
use crate::synth::{generate, Scenario, ScenarioParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_ANOMALY: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "thermshape", version, about = "Shape-clustering thermal anomaly detection for battery packs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run detection over a telemetry file and write verdict JSONL.
    Detect(DetectArgs),
    /// Read telemetry from stdin and emit verdicts as segments complete.
    Stream(StreamArgs),
    /// Generate a synthetic scenario file plus a ground-truth sidecar.
    Synth(SynthArgs),
    /// Summarise a verdict file as a per-segment CSV.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
struct DetectorFlags {
    /// Samples per segment.
    #[arg(long, default_value_t = 25)]
    segment_size: usize,
    /// Fixed cluster count; chosen per reference by silhouette if omitted.
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    #[arg(long, default_value_t = 5.0)]
    sat_cap: f64,
    /// Flag when the evidence reaches threshold times the cluster count.
    #[arg(long, default_value_t = 2.0)]
    threshold: f64,
    #[arg(long, default_value_t = 1)]
    persistence: u32,
    #[arg(long, default_value_t = 0.7)]
    min_valid_frac: f64,
    #[arg(long, default_value_t = 0.5)]
    dynamics_delta: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Nominal sampling period in seconds.
    #[arg(long, default_value_t = DEFAULT_PERIOD_SECS)]
    period: f64,
    /// How long (seconds) to wait for out-of-order records.
    #[arg(long, default_value_t = DEFAULT_REORDER_SECS)]
    reorder_window: f64,
    /// `first-segment`, or a JSON file mapping pack id to a saved reference.
    #[arg(long, default_value = "first-segment")]
    reference: String,
    /// Write the reference of every pack to this JSON file.
    #[arg(long)]
    save_reference: Option<PathBuf>,
}

impl DetectorFlags {
    fn config(&self) -> DetectorConfig {
        DetectorConfig {
            segment_size: self.segment_size,
            alpha: self.alpha,
            epsilon: self.epsilon,
            sat_cap: self.sat_cap,
            flag_threshold: self.threshold,
            persistence: self.persistence,
            min_valid_fraction: self.min_valid_frac,
            dynamics_delta: self.dynamics_delta,
            cluster_count: self.clusters,
            rng_seed: self.seed,
        }
    }

    fn options(&self) -> Result<PipelineOptions> {
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::Config("period must be positive".into()));
        }
        if !(self.reorder_window >= 0.0 && self.reorder_window.is_finite()) {
            return Err(Error::Config("reorder window must be non-negative".into()));
        }
        Ok(PipelineOptions { period: self.period, reorder_secs: self.reorder_window })
    }

    fn load_reference(&self) -> Result<(ReferenceDescriptor, BTreeMap<String, ReferenceModel>)> {
        if self.reference == "first-segment" {
            return Ok((ReferenceDescriptor { mode: "first-segment".into(), path: None, sha256: None }, BTreeMap::new()));
        }
        let bytes = fs::read(&self.reference)?;
        let refs: BTreeMap<String, ReferenceModel> = serde_json::from_slice(&bytes)?;
        let desc = ReferenceDescriptor { mode: "file".into(), path: Some(self.reference.clone()), sha256: Some(sha256_hex(&bytes)) };
        Ok((desc, refs))
    }
}

#[derive(Debug, Args)]
struct DetectArgs {
    /// Telemetry file (CSV or JSONL).
    input: PathBuf,
    /// Input format; guessed from the extension if omitted.
    #[arg(long)]
    format: Option<Format>,
    /// Run manifest path [default: <input>.manifest.json].
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Write verdicts here instead of standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[command(flatten)]
    detector: DetectorFlags,
}

#[derive(Debug, Args)]
struct StreamArgs {
    #[arg(long, default_value = "csv")]
    format: Format,
    /// Write a run manifest when the stream ends.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    detector: DetectorFlags,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// case1_runaway, case2_twopack, steady or outage.
    scenario: Scenario,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Divergence onset sample (case1_runaway).
    #[arg(long)]
    onset: Option<usize>,
    /// Divergence slope in degrees per sample (case1_runaway).
    #[arg(long)]
    slope: Option<f64>,
    /// Diverging channel (case1_runaway).
    #[arg(long)]
    diverging_channel: Option<usize>,
    /// Fraction of records dropped at random.
    #[arg(long)]
    dropout: Option<f64>,
    /// Window without records, as START:LEN in samples.
    #[arg(long, value_parser = parse_pair)]
    outage: Option<(usize, usize)>,
    /// Delay one channel, as CHANNEL:SLOTS.
    #[arg(long, value_parser = parse_pair)]
    delay: Option<(usize, usize)>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    pack_id: Option<String>,
    /// Output format; guessed from the extension if omitted.
    #[arg(long)]
    format: Option<Format>,
    /// Ground-truth sidecar path [default: <out> with extension .truth.json].
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    verdicts: PathBuf,
    #[arg(long)]
    telemetry: PathBuf,
    /// Manifest of the run [default: <telemetry>.manifest.json].
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// CSV destination; standard output if omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected A:B, got '{s}'"))?;
    let a = a.trim().parse().map_err(|e| format!("'{a}': {e}"))?;
    let b = b.trim().parse().map_err(|e| format!("'{b}': {e}"))?;
    Ok((a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDescriptor {
    pub path: String,
    pub format: Format,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDescriptor {
    /// `first-segment` or `file`.
    pub mode: String,
    pub path: Option<String>,
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDescriptor {
    pub sha256: String,
    pub lines: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackSummary {
    pub pack_id: String,
    /// Timestamp of grid slot 0.
    pub origin: Option<f64>,
    pub segments: u64,
    pub anomalies: u64,
    pub reference_established: bool,
}

/// Everything needed to reproduce a run. Contains no wall-clock data, so
/// reruns produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: DetectorConfig,
    pub pipeline: PipelineOptions,
    pub input: InputDescriptor,
    pub reference: ReferenceDescriptor,
    pub verdicts: OutputDescriptor,
    pub status_counts: BTreeMap<String, u64>,
    pub rng_seed: u64,
    pub stats: SessionStats,
    pub packs: Vec<PackSummary>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Entry point for the binary.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdin = io::stdin();
    let mut stdin = stdin.lock();
    let mut stdout = io::stdout();
    let mut stderr = io::stderr();
    run_with(args, &mut stdin, &mut stdout, &mut stderr)
}

/// Runs the CLI against explicit streams and returns the exit code.
pub fn run_with<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(stdout, "{text}");
                EXIT_OK
            };
        }
    };
    let result = match cli.command {
        Command::Detect(a) => cmd_detect(&a, stdout, stderr),
        Command::Stream(a) => cmd_stream(&a, stdin, stdout, stderr),
        Command::Synth(a) => cmd_synth(&a, stderr).map(|_| EXIT_OK),
        Command::Report(a) => cmd_report(&a, stdout).map(|_| EXIT_OK),
    };
    match result {
        Ok(code) => code,
        // A closed downstream pipe (e.g. `| head`) is not worth a message.
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => EXIT_ERROR,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e {
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_ERROR,
            }
        }
    }
}

/// Hashes everything read through it.
struct HashingReader<R> {
    inner: R,
    hasher: Sha256,
    bytes: u64,
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        self.bytes += n as u64;
        Ok(n)
    }
}

/// Writes verdict lines, keeping a running hash and count.
struct VerdictSink<'a> {
    out: &'a mut dyn Write,
    hasher: Sha256,
    lines: u64,
    counts: BTreeMap<String, u64>,
    flush_each: bool,
}

impl<'a> VerdictSink<'a> {
    fn new(out: &'a mut dyn Write, flush_each: bool) -> Self {
        Self { out, hasher: Sha256::new(), lines: 0, counts: BTreeMap::new(), flush_each }
    }

    fn write(&mut self, verdicts: &[PackVerdict]) -> Result<()> {
        for v in verdicts {
            let mut line = serde_json::to_vec(v)?;
            line.push(b'\n');
            self.out.write_all(&line)?;
            self.hasher.update(&line);
            self.lines += 1;
            *self.counts.entry(v.verdict.status.as_str().to_string()).or_default() += 1;
            if self.flush_each {
                self.out.flush()?;
            }
        }
        Ok(())
    }

    fn anomalies(&self) -> u64 {
        self.counts.get(Status::Anomaly.as_str()).copied().unwrap_or(0)
    }

    fn finish(self) -> Result<(OutputDescriptor, BTreeMap<String, u64>)> {
        self.out.flush()?;
        Ok((OutputDescriptor { sha256: hex::encode(self.hasher.finalize()), lines: self.lines }, self.counts))
    }
}

/// Feeds every record of `reader` through a session, writing verdicts as
/// they appear.
fn drive<R: BufRead>(
    reader: R,
    format: Format,
    session: &mut Session,
    sink: &mut VerdictSink<'_>,
    summaries: &mut BTreeMap<String, (u64, u64)>,
) -> Result<u64> {
    let mut records = parse_records(reader, format)?;
    while let Some(rec) = records.next_record()? {
        let verdicts = session.push(&rec)?;
        tally(summaries, &verdicts);
        sink.write(&verdicts)?;
    }
    Ok(records.malformed())
}

fn tally(summaries: &mut BTreeMap<String, (u64, u64)>, verdicts: &[PackVerdict]) {
    for v in verdicts {
        let e = summaries.entry(v.pack_id.clone()).or_default();
        e.0 += 1;
        e.1 += u64::from(v.verdict.status == Status::Anomaly);
    }
}

struct RunOutcome {
    finished: Vec<FinishedPack>,
    stats: SessionStats,
    summaries: BTreeMap<String, (u64, u64)>,
}

fn finish_session(session: Session, sink: &mut VerdictSink<'_>, mut summaries: BTreeMap<String, (u64, u64)>, malformed: u64) -> Result<RunOutcome> {
    let (tail, finished, mut stats) = session.finish()?;
    tally(&mut summaries, &tail);
    sink.write(&tail)?;
    stats.malformed = malformed;
    Ok(RunOutcome { finished, stats, summaries })
}

fn pack_summaries(outcome: &RunOutcome) -> Vec<PackSummary> {
    outcome
        .finished
        .iter()
        .map(|p| {
            let (segments, anomalies) = outcome.summaries.get(&p.pack_id).copied().unwrap_or_default();
            PackSummary {
                pack_id: p.pack_id.clone(),
                origin: p.origin,
                segments,
                anomalies,
                reference_established: p.detector.reference().is_some(),
            }
        })
        .collect()
}

fn save_references(path: &Path, finished: &[FinishedPack]) -> Result<()> {
    let refs: BTreeMap<&str, &ReferenceModel> =
        finished.iter().filter_map(|p| p.detector.reference().map(|r| (p.pack_id.as_str(), r))).collect();
    let mut bytes = serde_json::to_vec_pretty(&refs)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(manifest)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn default_manifest_path(input: &Path) -> PathBuf {
    let mut s = input.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn summary_line(stderr: &mut dyn Write, stats: &SessionStats, lines: u64, anomalies: u64) {
    let _ = writeln!(
        stderr,
        "records {} malformed {} late {} channel-mismatch {} partial-segments {} verdicts {} anomalies {}",
        stats.records,
        stats.malformed,
        stats.late_dropped,
        stats.channel_mismatch,
        stats.partial_segments_discarded,
        lines,
        anomalies
    );
}

#[allow(clippy::too_many_arguments)]
fn build_manifest(
    command: &str,
    config: DetectorConfig,
    pipeline: PipelineOptions,
    input: InputDescriptor,
    reference: ReferenceDescriptor,
    verdicts: OutputDescriptor,
    status_counts: BTreeMap<String, u64>,
    outcome: &RunOutcome,
) -> RunManifest {
    RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        rng_seed: config.rng_seed,
        config,
        pipeline,
        input,
        reference,
        verdicts,
        status_counts,
        stats: outcome.stats.clone(),
        packs: pack_summaries(outcome),
    }
}

fn cmd_detect(args: &DetectArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let config = args.detector.config();
    config.validate()?;
    let options = args.detector.options()?;
    let (ref_desc, refs) = args.detector.load_reference()?;
    let format = args.format.unwrap_or_else(|| Format::from_path(&args.input));
    let bytes = fs::read(&args.input)?;
    let input = InputDescriptor {
        path: args.input.display().to_string(),
        format,
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    };

    let mut file_out;
    let out: &mut dyn Write = match &args.output {
        Some(p) => {
            file_out = io::BufWriter::new(fs::File::create(p)?);
            &mut file_out
        }
        None => stdout,
    };
    let mut sink = VerdictSink::new(out, false);
    let mut session = Session::new(config.clone(), options.clone(), refs)?;
    let mut summaries = BTreeMap::new();
    let malformed = drive(Cursor::new(&bytes[..]), format, &mut session, &mut sink, &mut summaries)?;
    let outcome = finish_session(session, &mut sink, summaries, malformed)?;
    let anomalies = sink.anomalies();
    let (verdicts, counts) = sink.finish()?;
    summary_line(stderr, &outcome.stats, verdicts.lines, anomalies);

    if let Some(p) = &args.detector.save_reference {
        save_references(p, &outcome.finished)?;
    }
    let manifest = build_manifest("detect", config, options, input, ref_desc, verdicts, counts, &outcome);
    let path = args.manifest.clone().unwrap_or_else(|| default_manifest_path(&args.input));
    write_manifest(&path, &manifest)?;
    Ok(if anomalies > 0 { EXIT_ANOMALY } else { EXIT_OK })
}

fn cmd_stream(args: &StreamArgs, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let config = args.detector.config();
    config.validate()?;
    let options = args.detector.options()?;
    let (ref_desc, refs) = args.detector.load_reference()?;

    let mut reader = BufReader::new(HashingReader { inner: stdin, hasher: Sha256::new(), bytes: 0 });
    let mut sink = VerdictSink::new(stdout, true);
    let mut session = Session::new(config.clone(), options.clone(), refs)?;
    let mut summaries = BTreeMap::new();
    let malformed = drive(&mut reader, args.format, &mut session, &mut sink, &mut summaries)?;
    let outcome = finish_session(session, &mut sink, summaries, malformed)?;
    let anomalies = sink.anomalies();
    let (verdicts, counts) = sink.finish()?;
    summary_line(stderr, &outcome.stats, verdicts.lines, anomalies);

    if let Some(p) = &args.detector.save_reference {
        save_references(p, &outcome.finished)?;
    }
    if let Some(path) = &args.manifest {
        let hashing = reader.into_inner();
        let input = InputDescriptor {
            path: "-".into(),
            format: args.format,
            sha256: hex::encode(hashing.hasher.finalize()),
            bytes: hashing.bytes,
        };
        let manifest = build_manifest("stream", config, options, input, ref_desc, verdicts, counts, &outcome);
        write_manifest(path, &manifest)?;
    }
    Ok(if anomalies > 0 { EXIT_ANOMALY } else { EXIT_OK })
}

fn cmd_synth(args: &SynthArgs, stderr: &mut dyn Write) -> Result<()> {
    let mut p = ScenarioParams::new(args.scenario, args.seed);
    if let Some(n) = args.channels {
        p.channels = n;
        if args.diverging_channel.is_none() {
            p.diverging_channel = p.diverging_channel.min(n.saturating_sub(1));
        }
    }
    if let Some(n) = args.samples {
        p.samples = n;
        if let Some((_, len)) = p.outage {
            p.outage = Some((n * 2 / 5, len.min(n - n * 2 / 5)));
        }
    }
    if let Some(v) = args.onset {
        p.onset = v;
    }
    if let Some(v) = args.slope {
        p.slope = v;
    }
    if let Some(v) = args.diverging_channel {
        p.diverging_channel = v;
    }
    if let Some(v) = args.dropout {
        p.dropout = v;
    }
    if args.outage.is_some() {
        p.outage = args.outage;
    }
    if args.delay.is_some() {
        p.delay = args.delay;
    }
    if let Some(v) = args.noise {
        p.noise = v;
    }
    if let Some(v) = &args.pack_id {
        p.pack_id = v.clone();
    }
    p.validate().map_err(|e| match e {
        Error::InvalidInput(m) => Error::Config(m),
        other => other,
    })?;
    let synthetic = generate(&p)?;
    let format = args.format.unwrap_or_else(|| Format::from_path(&args.out));
    let file = io::BufWriter::new(fs::File::create(&args.out)?);
    match format {
        Format::Csv => write_csv(&synthetic.records, file)?,
        Format::Jsonl => {
            let mut file = file;
            write_jsonl(&synthetic.records, &mut file)?;
            file.flush()?;
        }
    }
    let truth_path = args.truth.clone().unwrap_or_else(|| args.out.with_extension("truth.json"));
    let mut truth = serde_json::to_vec_pretty(&synthetic.truth)?;
    truth.push(b'\n');
    fs::write(&truth_path, truth)?;
    let _ = writeln!(
        stderr,
        "wrote {} records to {} and ground truth to {}",
        synthetic.records.len(),
        args.out.display(),
        truth_path.display()
    );
    Ok(())
}

/// Columns of the report CSV.
pub const REPORT_COLUMNS: [&str; 9] =
    ["pack_id", "k", "t_start", "status", "p", "a", "max_temperature", "dist", "offending_channels"];

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

fn cmd_report(args: &ReportArgs, stdout: &mut dyn Write) -> Result<()> {
    let manifest_path = args.manifest.clone().unwrap_or_else(|| default_manifest_path(&args.telemetry));
    let manifest: RunManifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    let telemetry = fs::read(&args.telemetry)?;
    if sha256_hex(&telemetry) != manifest.input.sha256 {
        return Err(Error::InvalidInput(format!(
            "manifest mismatch: {} does not hash to the input recorded in {}",
            args.telemetry.display(),
            manifest_path.display()
        )));
    }
    let verdict_bytes = fs::read(&args.verdicts)?;
    if sha256_hex(&verdict_bytes) != manifest.verdicts.sha256 {
        return Err(Error::InvalidInput(format!(
            "manifest mismatch: {} is not the verdict output recorded in {}",
            args.verdicts.display(),
            manifest_path.display()
        )));
    }
    let mut verdicts = Vec::new();
    for line in verdict_bytes.split(|&b| b == b'\n').filter(|l| !l.iter().all(u8::is_ascii_whitespace)) {
        verdicts.push(serde_json::from_slice::<PackVerdict>(line)?);
    }

    let origins: BTreeMap<&str, f64> =
        manifest.packs.iter().filter_map(|p| p.origin.map(|o| (p.pack_id.as_str(), o))).collect();
    let period = manifest.pipeline.period;
    let seg_secs = manifest.config.segment_size as f64 * period;

    // Hottest reading per (pack, segment), using the same slot rounding as
    // the detector.
    let mut hottest: BTreeMap<(String, u64), f64> = BTreeMap::new();
    let mut records = parse_records(Cursor::new(&telemetry[..]), manifest.input.format)?;
    while let Some(rec) = records.next_record()? {
        let Some(&origin) = origins.get(rec.pack_id.as_str()) else { continue };
        let slot = ((rec.timestamp - origin) / period).round();
        if slot < 0.0 {
            continue;
        }
        let seg = slot as u64 / manifest.config.segment_size as u64;
        let max = rec.temperatures.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max.is_finite() {
            let e = hottest.entry((rec.pack_id.clone(), seg)).or_insert(f64::NEG_INFINITY);
            *e = e.max(max);
        }
    }

    let mut file_out;
    let out: &mut dyn Write = match &args.out {
        Some(p) => {
            file_out = io::BufWriter::new(fs::File::create(p)?);
            &mut file_out
        }
        None => stdout,
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for pv in &verdicts {
        let v = &pv.verdict;
        let t_start = origins.get(pv.pack_id.as_str()).map(|o| (o + v.k as f64 * seg_secs).to_string()).unwrap_or_default();
        let max_t = hottest.get(&(pv.pack_id.clone(), v.k)).map(|m| m.to_string()).unwrap_or_default();
        w.write_record([
            pv.pack_id.clone(),
            v.k.to_string(),
            t_start,
            v.status.as_str().to_string(),
            v.p.to_string(),
            v.a.to_string(),
            max_t,
            join(&v.dist),
            join(&v.offending_channels),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut stdin = Cursor::new(Vec::new());
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_with(std::iter::once("thermshape").chain(args.iter().copied()), &mut stdin, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn help_and_version_exit_zero() {
        let (code, out, _) = run_args(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("detect"));
        let (code, out, _) = run_args(&["--version"]);
        assert_eq!(code, 0);
        assert!(out.contains(env!("CARGO_PKG_VERSION")));
    }

    #[test]
    fn bad_flags_are_usage_errors() {
        assert_eq!(run_args(&["detect"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["detect", "x.csv", "--alpha", "abc"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["synth", "case3", "--out", "x.csv"]).0, EXIT_USAGE);
    }

    #[test]
    fn out_of_range_config_is_usage_error() {
        let (code, _, err) = run_args(&["detect", "missing.csv", "--alpha", "1.5"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("alpha"));
    }

    #[test]
    fn missing_input_is_runtime_error() {
        let (code, _, err) = run_args(&["detect", "/nonexistent/telemetry.csv"]);
        assert_eq!(code, EXIT_ERROR);
        assert!(err.starts_with("error:"));
    }

    #[test]
    fn pair_parser() {
        assert_eq!(parse_pair("3:2"), Ok((3, 2)));
        assert!(parse_pair("3").is_err());
        assert!(parse_pair("a:2").is_err());
    }

    #[test]
    fn manifest_path_appends_suffix() {
        assert_eq!(default_manifest_path(Path::new("d/run.csv")), PathBuf::from("d/run.csv.manifest.json"));
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}

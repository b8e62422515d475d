//! Record-at-a-time driver shared by batch and streaming runs: records are
//! snapped to the grid, buffered into segments and handed to one
//! [`Detector`] per pack.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detector::{Detector, DetectorConfig, ReferenceModel, SegmentVerdict, Segmenter};
use crate::error::Result;
use crate::ingest::{ChannelKind, SlotSnapper, TelemetryRecord, DEFAULT_PERIOD_SECS, DEFAULT_REORDER_SECS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub period: f64,
    pub reorder_secs: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { period: DEFAULT_PERIOD_SECS, reorder_secs: DEFAULT_REORDER_SECS }
    }
}

/// A verdict tagged with the pack it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackVerdict {
    pub pack_id: String,
    #[serde(flatten)]
    pub verdict: SegmentVerdict,
}

pub struct PackPipeline {
    snapper: SlotSnapper,
    segmenter: Segmenter,
    detector: Detector,
    channels: usize,
}

impl PackPipeline {
    pub fn new(
        channels: usize,
        config: &DetectorConfig,
        options: &PipelineOptions,
        reference: Option<ReferenceModel>,
    ) -> Result<Self> {
        let ranges = vec![ChannelKind::Temperature.default_range(); channels];
        let detector = match reference {
            Some(r) => Detector::with_reference(config.clone(), ranges, r)?,
            None => Detector::new(config.clone(), ranges)?,
        };
        Ok(Self {
            snapper: SlotSnapper::new(channels, options.period, options.reorder_secs)?,
            segmenter: Segmenter::new(config.segment_size, channels)?,
            detector,
            channels,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn origin(&self) -> Option<f64> {
        self.snapper.origin()
    }

    pub fn late_dropped(&self) -> u64 {
        self.snapper.late_dropped() + self.segmenter.late_rows()
    }

    pub fn push(&mut self, record: &TelemetryRecord) -> Result<Vec<SegmentVerdict>> {
        let rows = self.snapper.push(record.timestamp, &record.temperatures)?;
        self.drain(rows)
    }

    fn drain(&mut self, rows: Vec<crate::ingest::GridRow>) -> Result<Vec<SegmentVerdict>> {
        let mut out = Vec::new();
        for row in rows {
            for seg in self.segmenter.push_row(row.slot, &row.temperatures)? {
                out.push(self.detector.process(&seg)?);
            }
        }
        Ok(out)
    }

    /// Flushes buffered rows. The returned flag is true when a trailing
    /// partial segment was discarded.
    pub fn finish(mut self) -> Result<(Vec<SegmentVerdict>, bool, Detector)> {
        let rows = self.snapper.finish();
        let verdicts = self.drain(rows)?;
        let partial = self.segmenter.finish();
        Ok((verdicts, partial, self.detector))
    }
}

/// Counters reported at the end of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub records: u64,
    pub malformed: u64,
    pub late_dropped: u64,
    pub channel_mismatch: u64,
    pub partial_segments_discarded: u64,
}

/// Multi-pack session. Packs are created on first sight.
pub struct Session {
    config: DetectorConfig,
    options: PipelineOptions,
    references: BTreeMap<String, ReferenceModel>,
    packs: BTreeMap<String, PackPipeline>,
    pub stats: SessionStats,
}

/// What a finished session leaves behind per pack.
pub struct FinishedPack {
    pub pack_id: String,
    pub origin: Option<f64>,
    pub detector: Detector,
}

impl Session {
    pub fn new(config: DetectorConfig, options: PipelineOptions, references: BTreeMap<String, ReferenceModel>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, options, references, packs: BTreeMap::new(), stats: SessionStats::default() })
    }

    pub fn push(&mut self, record: &TelemetryRecord) -> Result<Vec<PackVerdict>> {
        self.stats.records += 1;
        if !self.packs.contains_key(&record.pack_id) {
            let reference = self.references.get(&record.pack_id).cloned();
            let pipeline = PackPipeline::new(record.temperatures.len(), &self.config, &self.options, reference)?;
            self.packs.insert(record.pack_id.clone(), pipeline);
        }
        let pack = self.packs.get_mut(&record.pack_id).expect("inserted above");
        if record.temperatures.len() != pack.channels() {
            self.stats.channel_mismatch += 1;
            return Ok(Vec::new());
        }
        let verdicts = pack.push(record)?;
        Ok(verdicts.into_iter().map(|verdict| PackVerdict { pack_id: record.pack_id.clone(), verdict }).collect())
    }

    /// Flushes every pack in pack-id order.
    pub fn finish(mut self) -> Result<(Vec<PackVerdict>, Vec<FinishedPack>, SessionStats)> {
        let mut out = Vec::new();
        let mut finished = Vec::new();
        for (pack_id, pack) in std::mem::take(&mut self.packs) {
            let origin = pack.origin();
            let late = pack.late_dropped();
            let (verdicts, partial, detector) = pack.finish()?;
            self.stats.late_dropped += late;
            self.stats.partial_segments_discarded += u64::from(partial);
            out.extend(verdicts.into_iter().map(|verdict| PackVerdict { pack_id: pack_id.clone(), verdict }));
            finished.push(FinishedPack { pack_id, origin, detector });
        }
        Ok((out, finished, self.stats))
    }
}

/// Runs a single pack's records through a fresh pipeline.
pub fn detect_records(records: &[TelemetryRecord], config: &DetectorConfig) -> Result<Vec<SegmentVerdict>> {
    let Some(first) = records.first() else { return Ok(Vec::new()) };
    let mut pipeline = PackPipeline::new(first.temperatures.len(), config, &PipelineOptions::default(), None)?;
    let mut out = Vec::new();
    for r in records {
        if r.temperatures.len() == pipeline.channels() {
            out.extend(pipeline.push(r)?);
        }
    }
    out.extend(pipeline.finish()?.0);
    Ok(out)
}

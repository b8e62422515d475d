//! Buffering grid rows into fixed-size segments, and range cleaning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ingest::{ChannelSample, ValidRange};
use crate::series::RawSeries;

/// One segment: every channel's values over `size` consecutive slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMatrix {
    /// Position of the segment in the stream, counting skipped ones.
    pub index: u64,
    pub start_slot: u64,
    pub channels: Vec<RawSeries>,
}

impl SeriesMatrix {
    /// A segment with no valid samples at all.
    pub fn empty(index: u64, size: usize, channel_count: usize) -> Self {
        let channels = (0..channel_count)
            .map(|id| RawSeries { values: vec![f64::NAN; size], valid: vec![false; size], channel_id: id })
            .collect();
        Self { index, start_slot: index * size as u64, channels }
    }

    pub fn size(&self) -> usize {
        self.channels.first().map_or(0, |c| c.len())
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn invalid_slots(&self) -> usize {
        self.channels.iter().map(|c| c.len() - c.valid_count()).sum()
    }
}

/// Incremental segmenter. Rows must arrive in increasing slot order; a
/// segment is emitted as soon as its last slot, or any later slot, is seen.
/// Segments that received nothing come out fully invalid.
#[derive(Debug, Clone)]
pub struct Segmenter {
    size: usize,
    channel_count: usize,
    current: SeriesMatrix,
    touched: bool,
    late_rows: u64,
}

impl Segmenter {
    pub fn new(size: usize, channel_count: usize) -> Result<Self> {
        if size < 2 {
            return Err(invalid("segment size must be at least 2"));
        }
        Ok(Self {
            size,
            channel_count,
            current: SeriesMatrix::empty(0, size, channel_count),
            touched: false,
            late_rows: 0,
        })
    }

    pub fn late_rows(&self) -> u64 {
        self.late_rows
    }

    /// Whether the segment under construction has received any row.
    pub fn has_partial(&self) -> bool {
        self.touched
    }

    pub fn push_row(&mut self, slot: u64, values: &[Option<f64>]) -> Result<Vec<SeriesMatrix>> {
        if values.len() != self.channel_count {
            return Err(invalid(format!("row has {} channels, expected {}", values.len(), self.channel_count)));
        }
        let size = self.size as u64;
        let seg = slot / size;
        if seg < self.current.index {
            self.late_rows += 1;
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        while self.current.index < seg {
            let next = SeriesMatrix::empty(self.current.index + 1, self.size, self.channel_count);
            out.push(std::mem::replace(&mut self.current, next));
            self.touched = false;
        }
        let offset = (slot % size) as usize;
        for (ch, v) in self.current.channels.iter_mut().zip(values) {
            if let Some(v) = v {
                ch.values[offset] = *v;
                ch.valid[offset] = true;
            }
        }
        self.touched = true;
        if offset == self.size - 1 {
            let next = SeriesMatrix::empty(self.current.index + 1, self.size, self.channel_count);
            out.push(std::mem::replace(&mut self.current, next));
            self.touched = false;
        }
        Ok(out)
    }

    /// Ends the stream. Returns true when a partially filled segment was
    /// discarded.
    pub fn finish(self) -> bool {
        self.touched
    }
}

/// Batch segmentation of grid samples. Samples must be in non-decreasing
/// slot order per channel. A trailing segment whose last slot never arrived
/// is dropped.
pub fn segment(samples: &[ChannelSample], channel_count: usize, size: usize) -> Result<Vec<SeriesMatrix>> {
    let mut last_slot: Vec<Option<u64>> = vec![None; channel_count];
    let mut rows: BTreeMap<u64, Vec<Option<f64>>> = BTreeMap::new();
    for s in samples {
        if s.channel >= channel_count {
            return Err(invalid(format!("sample for unknown channel {}", s.channel)));
        }
        if last_slot[s.channel].is_some_and(|prev| s.slot < prev) {
            return Err(invalid(format!("channel {} samples are not in time order", s.channel)));
        }
        last_slot[s.channel] = Some(s.slot);
        rows.entry(s.slot).or_insert_with(|| vec![None; channel_count])[s.channel] = Some(s.value);
    }
    let mut seg = Segmenter::new(size, channel_count)?;
    let mut out = Vec::new();
    for (slot, values) in rows {
        out.extend(seg.push_row(slot, &values)?);
    }
    Ok(out)
}

/// Marks values outside their channel's valid range as invalid. Nothing is
/// filled in.
pub fn clean(seg: &SeriesMatrix, ranges: &[ValidRange]) -> Result<SeriesMatrix> {
    let mut out = seg.clone();
    for ch in &mut out.channels {
        let range = ranges
            .get(ch.channel_id)
            .ok_or_else(|| invalid(format!("no valid range for channel {}", ch.channel_id)))?;
        for (v, ok) in ch.values.iter().zip(ch.valid.iter_mut()) {
            if *ok && !range.contains(*v) {
                *ok = false;
            }
        }
    }
    Ok(out)
}

//! Thermal anomaly detection for multi-sensor battery packs by shape
//! clustering.
//!
//! Temperature channels are cut into fixed-size segments, each segment is
//! clustered with K-shape under the shape-based distance, and anomalies are
//! raised when a channel changes cluster between consecutive segments or when
//! the per-cluster fitting error grows relative to the previous segment and
//! to a healthy reference segment.

pub mod eigen;
pub mod cli;
pub mod detector;
pub mod error;
pub mod ingest;
pub mod kshape;
pub mod pipeline;
pub mod series;
pub mod synth;

pub use error::{Error, Result};

//! Per-frame records and their JSON-lines persistence.
//!
//! A frames file starts with a header line `{"format", "version", "config"}`
//! followed by one record per line in frame order.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::Spot;
use crate::gating::GateTrace;
use crate::readout::PmtPulse;
use crate::source::Origin;

pub const FRAMES_FORMAT: &str = "hicam-frames";
pub const FRAMES_VERSION: &str = "1.0";

/// A primary photon that reached the intensifier and produced a flash.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthPhoton {
    #[serde(rename = "t_ns")]
    pub t: f64,
    pub kx: f64,
    pub ky: f64,
    pub origin: Origin,
    pub pair_id: Option<u64>,
}

/// Counters describing what happened inside one frame. Not persisted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrameDiagnostics {
    pub photons_admitted: u32,
    pub photons_missed: u32,
    pub photons_off_grid: u32,
    pub flashes: u32,
    pub crosstalk_flashes: u32,
    pub false_pulses: u32,
    pub triggers: u32,
    pub ignored_triggers: u32,
    pub fit_failures: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub gate: GateTrace,
    pub spots: Vec<Spot>,
    pub pmt_pulses: Vec<PmtPulse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<TruthPhoton>>,
    #[serde(skip)]
    pub diagnostics: FrameDiagnostics,
}

impl FrameRecord {
    pub fn photon_count(&self) -> usize {
        self.spots.len()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FramesHeader {
    pub format: String,
    pub version: String,
    pub config: serde_json::Value,
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("unsupported frames format version {0}")]
    UnsupportedVersion(String),
    #[error("empty frames file")]
    Empty,
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

pub struct FrameWriter<W: Write> {
    out: W,
    written: u64,
}

impl<W: Write> FrameWriter<W> {
    pub fn new(mut out: W, config: &impl Serialize) -> Result<Self, RecordError> {
        let header = FramesHeader {
            format: FRAMES_FORMAT.into(),
            version: FRAMES_VERSION.into(),
            config: serde_json::to_value(config).map_err(|e| RecordError::BadHeader(e.to_string()))?,
        };
        serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        Ok(Self { out, written: 0 })
    }

    pub fn write(&mut self, record: &FrameRecord) -> Result<(), RecordError> {
        serde_json::to_writer(&mut self.out, record).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn finish(mut self) -> Result<W, RecordError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Reads a frames file lazily. Corrupt record lines are yielded as
/// `RecordError::Corrupt` so callers can decide how many to tolerate.
pub struct FrameReader<R: BufRead> {
    lines: std::io::Lines<R>,
    line_no: usize,
    pub header: FramesHeader,
}

impl<R: BufRead> FrameReader<R> {
    pub fn new(input: R) -> Result<Self, RecordError> {
        let mut lines = input.lines();
        let first = lines.next().ok_or(RecordError::Empty)??;
        let header: FramesHeader =
            serde_json::from_str(&first).map_err(|e| RecordError::BadHeader(e.to_string()))?;
        if header.format != FRAMES_FORMAT {
            return Err(RecordError::BadHeader(format!("unknown format {:?}", header.format)));
        }
        let major = header.version.split('.').next().unwrap_or("");
        if major != FRAMES_VERSION.split('.').next().unwrap() {
            return Err(RecordError::UnsupportedVersion(header.version));
        }
        Ok(Self {
            lines,
            line_no: 1,
            header,
        })
    }
}

impl<R: BufRead> Iterator for FrameReader<R> {
    type Item = Result<FrameRecord, RecordError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(serde_json::from_str(&line).map_err(|e| RecordError::Corrupt {
                line: self.line_no,
                message: e.to_string(),
            }));
        }
    }
}

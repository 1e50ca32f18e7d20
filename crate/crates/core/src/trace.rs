//! Newline-delimited JSON traces: one header object, then one event object per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsm::{Timestamp, Value};
use crate::geometry::{Position3, Region, RobotId, SimTime};
use crate::platforms::PlatformKind;

pub const TRACE_FORMAT: &str = "roboport-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    Active,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Reach,
    Crossed,
}

/// Which task changed a control API variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WriterKind {
    App,
    Sensor,
    Controller,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotMeta {
    pub id: RobotId,
    pub platform: PlatformKind,
    pub d_t: f64,
    pub q_d: f64,
    pub sensor_period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub time_limit: f64,
    pub robots: Vec<RobotMeta>,
}

impl TraceHeader {
    pub fn new(seed: u64, time_limit: f64, robots: Vec<RobotMeta>) -> TraceHeader {
        TraceHeader { format: TRACE_FORMAT.into(), version: TRACE_VERSION, seed, time_limit, robots }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// Sensor sample: `pos` is the sensed `currentPos`, `truth` the simulated position.
    Pose { pos: Position3, truth: Position3 },
    FlagChange { epoch: u64, flag: Flag, value: bool, writer: WriterKind },
    ReachavoidCall {
        epoch: u64,
        target: Position3,
        #[serde(rename = "unsafe")]
        unsafe_region: Region,
        writer: WriterKind,
    },
    PlanResult { epoch: u64, found: bool, waypoints: Vec<Position3>, tree_size: usize, samples: usize, requested_at: SimTime },
    Predicate { epoch: u64, predicate: Predicate, value: bool },
    DsmWrite { name: String, value: Value, stamp: Timestamp },
    DsmDeliver { name: String, value: Value, stamp: Timestamp, from: RobotId },
    AppBlock { block: String },
    Fault { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: SimTime,
    /// `None` for system-wide events.
    pub robot: Option<RobotId>,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub header: Option<TraceHeader>,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported trace format {0:?}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Trace {
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        if let Some(h) = &self.header {
            serde_json::to_writer(&mut w, h)?;
            writeln!(w)?;
        }
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Reads a trace. The header line is optional; blank lines are skipped.
    pub fn read_from(r: impl BufRead) -> Result<Trace, TraceError> {
        let mut tr = Trace::default();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| TraceError::Parse { line: i + 1, msg: e.to_string() })?;
            if raw.get("format").is_some() {
                let h: TraceHeader =
                    serde_json::from_value(raw).map_err(|e| TraceError::Parse { line: i + 1, msg: e.to_string() })?;
                if h.format != TRACE_FORMAT || h.version != TRACE_VERSION {
                    return Err(TraceError::Format(format!("{} v{}", h.format, h.version)));
                }
                tr.header = Some(h);
                continue;
            }
            let e: TraceEvent =
                serde_json::from_str(&line).map_err(|e| TraceError::Parse { line: i + 1, msg: e.to_string() })?;
            tr.events.push(e);
        }
        Ok(tr)
    }

    pub fn parse(s: &str) -> Result<Trace, TraceError> {
        Trace::read_from(s.as_bytes())
    }

    pub fn robot_meta(&self, id: RobotId) -> Option<&RobotMeta> {
        self.header.as_ref()?.robots.iter().find(|r| r.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisciplineViolation {
    pub index: usize,
    pub what: String,
}

/// Confirms every control API variable change in the trace came from its declared writer:
/// targets and unsafe sets from the application, flags from the controller.
pub fn check_writer_discipline(tr: &Trace) -> Vec<DisciplineViolation> {
    let mut out = Vec::new();
    for (i, e) in tr.events.iter().enumerate() {
        match &e.kind {
            EventKind::FlagChange { writer, flag, .. } if *writer != WriterKind::Controller => out.push(DisciplineViolation {
                index: i,
                what: format!("{flag:?} changed by {writer:?}"),
            }),
            EventKind::ReachavoidCall { writer, .. } if *writer != WriterKind::App => out.push(DisciplineViolation {
                index: i,
                what: format!("target changed by {writer:?}"),
            }),
            _ => {}
        }
    }
    out
}

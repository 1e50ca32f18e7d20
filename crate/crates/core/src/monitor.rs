//! Offline checker for the done / failed / active conditions over a recorded trace.
//!
//! Reads only the trace format. Predicates are recomputed from pose samples and the target
//! and unsafe set of each call; the controller's own predicate events are ignored.
//!
//! Per robot and epoch `[t0, T]` the monitor evaluates on the sample grid:
//!
//! * D1: `done` at some `t` implies `reach` at some sample in `[t0, t]`
//! * D2: `reach` persisting over a window `[t1, t1 + d_t]` implies `done` on a suffix
//! * F1 / F2: the same with `failed` and `crossed`
//! * A1: `active` at `t` implies neither `done` nor `failed` at any point up to `t`
//!
//! A persistence window starts at a sample strictly after `t0`, ends no later than `T`,
//! holds at every sample inside it and contains at least `ceil(d_t / sensor_period)` samples.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{dist, dist_to_region, Position3, Region, RobotId, SimTime};
use crate::trace::{EventKind, Flag, Trace};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    D1,
    D2,
    F1,
    F2,
    A1,
}

impl Condition {
    pub const ALL: [Condition; 5] = [Condition::D1, Condition::D2, Condition::F1, Condition::F2, Condition::A1];
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub from: f64,
    pub to: f64,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Pass,
    Fail { witness: Witness },
    Vacuous,
}

impl Outcome {
    pub fn is_fail(&self) -> bool {
        matches!(self, Outcome::Fail { .. })
    }

    pub fn short(&self) -> &'static str {
        match self {
            Outcome::Pass => "PASS",
            Outcome::Fail { .. } => "FAIL",
            Outcome::Vacuous => "VACUOUS",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    pub d_t: f64,
    pub q_d: f64,
    pub sensor_period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochVerdict {
    pub robot: RobotId,
    pub epoch: u64,
    pub t0: f64,
    pub end: f64,
    pub results: BTreeMap<Condition, Outcome>,
    /// Delay from the end of the first persistence window until the flag holds for good.
    pub d2_latency: Option<f64>,
    pub f2_latency: Option<f64>,
    /// Latency exceeded one sensor period (reported, not failed).
    pub late: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub epochs: Vec<EpochVerdict>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub pass: usize,
    pub fail: usize,
    pub vacuous: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MonitorError {
    #[error("malformed trace at event {index}: {reason}")]
    MalformedTrace { index: usize, reason: String },
    #[error("no d_t / q_d / sensor_period known for robot {0}")]
    MissingParams(RobotId),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Flags {
    pub active: bool,
    pub done: bool,
    pub failed: bool,
}

impl Flags {
    fn set(&mut self, f: Flag, v: bool) {
        match f {
            Flag::Active => self.active = v,
            Flag::Done => self.done = v,
            Flag::Failed => self.failed = v,
        }
    }
}

/// One point of an epoch's grid: the flags after every event at `t`, and the predicates if
/// a pose was sampled at `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub t: f64,
    pub flags: Flags,
    /// `(reach, crossed)` at a pose sample.
    pub sample: Option<(bool, bool)>,
}

/// The observable content of one epoch, in the form both the monitor and test oracles consume.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochGrid {
    pub robot: RobotId,
    pub epoch: u64,
    pub t0: f64,
    pub end: f64,
    pub points: Vec<GridPoint>,
}

struct Open {
    epoch: u64,
    t0: SimTime,
    target: Position3,
    unsafe_region: Region,
    points: BTreeMap<SimTime, GridPoint>,
}

/// Splits a trace into per-robot epochs on the sample grid.
pub fn epoch_grids(tr: &Trace, params: &BTreeMap<RobotId, RobotParams>) -> Result<Vec<EpochGrid>, MonitorError> {
    let mut last_t = SimTime::ZERO;
    let mut flags: BTreeMap<RobotId, Flags> = BTreeMap::new();
    let mut open: BTreeMap<RobotId, Open> = BTreeMap::new();
    let mut out = Vec::new();
    let end = tr.events.iter().map(|e| e.t).max().unwrap_or(SimTime::ZERO);
    let malformed = |index, reason: String| MonitorError::MalformedTrace { index, reason };

    let close = |o: Open, robot: RobotId, end: SimTime| EpochGrid {
        robot,
        epoch: o.epoch,
        t0: o.t0.secs(),
        end: end.secs(),
        points: o.points.into_values().collect(),
    };

    for (i, e) in tr.events.iter().enumerate() {
        if e.t < last_t {
            return Err(malformed(i, format!("time goes backwards from {last_t} to {}", e.t)));
        }
        last_t = e.t;
        let Some(robot) = e.robot else { continue };
        match &e.kind {
            EventKind::ReachavoidCall { epoch, target, unsafe_region, .. } => {
                let prev = open.remove(&robot);
                let expected = prev.as_ref().map_or(1, |o| o.epoch + 1);
                if *epoch != expected {
                    return Err(malformed(i, format!("call opens epoch {epoch}, expected {expected}")));
                }
                if let Some(o) = prev {
                    out.push(close(o, robot, e.t));
                }
                let f = *flags.entry(robot).or_default();
                let mut points = BTreeMap::new();
                points.insert(e.t, GridPoint { t: e.t.secs(), flags: f, sample: None });
                open.insert(robot, Open { epoch: *epoch, t0: e.t, target: *target, unsafe_region: unsafe_region.clone(), points });
            }
            EventKind::FlagChange { epoch, flag, value, .. } => {
                let Some(o) = open.get_mut(&robot) else {
                    return Err(malformed(i, format!("flag change for robot {robot} before any call")));
                };
                if *epoch != o.epoch {
                    return Err(malformed(i, format!("flag change tagged epoch {epoch} inside epoch {}", o.epoch)));
                }
                let f = flags.entry(robot).or_default();
                f.set(*flag, *value);
                let f = *f;
                let p = o.points.entry(e.t).or_insert(GridPoint { t: e.t.secs(), flags: f, sample: None });
                p.flags = f;
            }
            EventKind::Pose { pos, .. } => {
                let Some(o) = open.get_mut(&robot) else { continue };
                let prm = params.get(&robot).ok_or(MonitorError::MissingParams(robot))?;
                let reach = dist(pos, &o.target) <= prm.q_d;
                let crossed = dist_to_region(pos, &o.unsafe_region).is_within(prm.q_d);
                let f = flags.get(&robot).copied().unwrap_or_default();
                let p = o.points.entry(e.t).or_insert(GridPoint { t: e.t.secs(), flags: f, sample: None });
                p.sample = Some((reach, crossed));
            }
            _ => {}
        }
    }
    for (robot, o) in open {
        out.push(close(o, robot, end));
    }
    out.sort_by_key(|g| (g.robot, g.epoch));
    Ok(out)
}

fn persistence_windows(g: &EpochGrid, which: impl Fn((bool, bool)) -> bool, p: &RobotParams) -> Vec<f64> {
    let need = (p.d_t / p.sensor_period - EPS).ceil().max(1.0) as usize;
    let samples: Vec<(f64, bool)> = g.points.iter().filter_map(|q| q.sample.map(|s| (q.t, which(s)))).collect();
    let mut out = Vec::new();
    for (k, &(t1, _)) in samples.iter().enumerate() {
        if t1 <= g.t0 + EPS || t1 + p.d_t > g.end + EPS {
            continue;
        }
        let inside: Vec<bool> = samples[k..].iter().take_while(|(t, _)| *t <= t1 + p.d_t + EPS).map(|s| s.1).collect();
        if inside.len() >= need && inside.iter().all(|&v| v) {
            out.push(t1);
        }
    }
    out
}

fn precedes(g: &EpochGrid, flag: impl Fn(&Flags) -> bool, pred: impl Fn((bool, bool)) -> bool, what: &str) -> Outcome {
    let Some(first) = g.points.iter().find(|q| flag(&q.flags)) else {
        return Outcome::Vacuous;
    };
    let ok = g.points.iter().take_while(|q| q.t <= first.t).any(|q| q.sample.is_some_and(&pred));
    if ok {
        Outcome::Pass
    } else {
        Outcome::Fail {
            witness: Witness { from: g.t0, to: first.t, explanation: format!("{what} set at {} without a prior sample", first.t) },
        }
    }
}

fn persists_then_flag(
    g: &EpochGrid,
    flag: impl Fn(&Flags) -> bool,
    pred: impl Fn((bool, bool)) -> bool,
    p: &RobotParams,
    what: &str,
) -> (Outcome, Option<f64>) {
    let windows = persistence_windows(g, pred, p);
    let Some(&t1) = windows.first() else {
        return (Outcome::Vacuous, None);
    };
    let last = g.points.last().expect("epoch grid has its call point");
    if !flag(&last.flags) {
        let w = Witness { from: t1, to: t1 + p.d_t, explanation: format!("{what} persisted but the flag is not set at {}", g.end) };
        return (Outcome::Fail { witness: w }, None);
    }
    let t2 = g.points.iter().rev().take_while(|q| flag(&q.flags)).last().map_or(last.t, |q| q.t);
    (Outcome::Pass, Some(t2 - (t1 + p.d_t)))
}

fn active_exclusive(g: &EpochGrid) -> Outcome {
    if !g.points.iter().any(|q| q.flags.active) {
        return Outcome::Vacuous;
    }
    let mut first_set: Option<f64> = None;
    for q in &g.points {
        if first_set.is_none() && (q.flags.done || q.flags.failed) {
            first_set = Some(q.t);
        }
        if let (true, Some(s)) = (q.flags.active, first_set) {
            return Outcome::Fail {
                witness: Witness { from: s, to: q.t, explanation: format!("active at {} after done/failed at {s}", q.t) },
            };
        }
    }
    Outcome::Pass
}

pub fn check_epoch(g: &EpochGrid, p: &RobotParams) -> EpochVerdict {
    let reach = |s: (bool, bool)| s.0;
    let crossed = |s: (bool, bool)| s.1;
    let mut results = BTreeMap::new();
    results.insert(Condition::D1, precedes(g, |f| f.done, reach, "done"));
    results.insert(Condition::F1, precedes(g, |f| f.failed, crossed, "failed"));
    let (d2, d2_latency) = persists_then_flag(g, |f| f.done, reach, p, "reach");
    let (f2, f2_latency) = persists_then_flag(g, |f| f.failed, crossed, p, "crossed");
    results.insert(Condition::D2, d2);
    results.insert(Condition::F2, f2);
    results.insert(Condition::A1, active_exclusive(g));
    let late = [d2_latency, f2_latency].iter().flatten().any(|l| *l > p.sensor_period + EPS);
    EpochVerdict { robot: g.robot, epoch: g.epoch, t0: g.t0, end: g.end, results, d2_latency, f2_latency, late }
}

/// Parameters from the trace header, with per-robot overrides applied on top.
pub fn params_for(tr: &Trace, overrides: &BTreeMap<RobotId, RobotParams>) -> BTreeMap<RobotId, RobotParams> {
    let mut m = BTreeMap::new();
    if let Some(h) = &tr.header {
        for r in &h.robots {
            m.insert(r.id, RobotParams { d_t: r.d_t, q_d: r.q_d, sensor_period: r.sensor_period });
        }
    }
    m.extend(overrides.iter().map(|(k, v)| (*k, *v)));
    m
}

pub fn check_trace(tr: &Trace, overrides: &BTreeMap<RobotId, RobotParams>) -> Result<Report, MonitorError> {
    let params = params_for(tr, overrides);
    let grids = epoch_grids(tr, &params)?;
    let mut epochs = Vec::with_capacity(grids.len());
    for g in &grids {
        let p = params.get(&g.robot).ok_or(MonitorError::MissingParams(g.robot))?;
        epochs.push(check_epoch(g, p));
    }
    Ok(Report { epochs })
}

impl Report {
    pub fn counts(&self) -> BTreeMap<Condition, Counts> {
        let mut m: BTreeMap<Condition, Counts> = Condition::ALL.iter().map(|c| (*c, Counts::default())).collect();
        for e in &self.epochs {
            for (c, o) in &e.results {
                let k = m.entry(*c).or_default();
                match o {
                    Outcome::Pass => k.pass += 1,
                    Outcome::Fail { .. } => k.fail += 1,
                    Outcome::Vacuous => k.vacuous += 1,
                }
            }
        }
        m
    }

    pub fn any_fail(&self) -> bool {
        self.epochs.iter().any(|e| e.results.values().any(Outcome::is_fail))
    }

    pub fn exit_code(&self) -> i32 {
        if self.any_fail() {
            2
        } else {
            0
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = (&EpochVerdict, Condition, &Witness)> {
        self.epochs.iter().flat_map(|e| {
            e.results.iter().filter_map(move |(c, o)| match o {
                Outcome::Fail { witness } => Some((e, *c, witness)),
                _ => None,
            })
        })
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{} epochs checked\n", self.epochs.len());
        s.push_str("cond  pass  fail  vacuous\n");
        for (c, k) in self.counts() {
            s.push_str(&format!("{c:<4} {:>5} {:>5} {:>8}\n", k.pass, k.fail, k.vacuous));
        }
        let late = self.epochs.iter().filter(|e| e.late).count();
        if late > 0 {
            s.push_str(&format!("latency: {late} epochs exceeded one sensor period\n"));
        }
        for (e, c, w) in self.failures() {
            s.push_str(&format!(
                "FAIL {c} robot {} epoch {} [{:.3}, {:.3}]: {}\n",
                e.robot, e.epoch, w.from, w.to, w.explanation
            ));
        }
        s
    }
}

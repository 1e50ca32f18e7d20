//! Brute-force evaluation of each monitored condition over the raw events of every epoch,
//! and a set of hand-labelled micro-traces.

use std::collections::BTreeMap;

use roboport::geometry::{dist, dist_to_region, Aabb, Position3, Region, RobotId, SimTime};
use roboport::monitor::{check_trace, Condition};
use roboport::platforms::PlatformKind;
use roboport::trace::{EventKind, Flag, RobotMeta, Trace, TraceEvent, TraceHeader, WriterKind};

const D_T: f64 = 0.3;
const Q_D: f64 = 0.1;
const SP: f64 = 0.1;

fn unsafe_box() -> Region {
    Region::from_boxes(vec![Aabb::new(Position3::new(1.0, -1.0, -1.0), Position3::new(2.0, 1.0, 1.0)).unwrap()])
}

/// Builds a trace from lines `t [rN:]item`, where item is one of
/// `call`, `callnear` (target beside the unsafe box), `R`/`C`/`N` (pose at the target, beside
/// the box, or elsewhere) or `+flag` / `-flag`.
pub fn build(src: &str) -> Trace {
    let mut epochs: BTreeMap<u32, u64> = BTreeMap::new();
    let mut events = Vec::new();
    let mut robots = std::collections::BTreeSet::new();
    for line in src.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (t, rest) = line.split_once(' ').unwrap();
        let t = SimTime::from_secs(t.parse().unwrap());
        let (r, item) = match rest.strip_prefix('r') {
            Some(x) => {
                let (r, it) = x.split_once(':').unwrap();
                (r.parse::<u32>().unwrap(), it)
            }
            None => (0, rest),
        };
        robots.insert(r);
        let epoch = *epochs.get(&r).unwrap_or(&0);
        let kind = match item {
            "call" | "callnear" => {
                let e = epochs.entry(r).or_insert(0);
                *e += 1;
                let target = if item == "call" { Position3::ORIGIN } else { Position3::new(0.92, 0.0, 0.0) };
                EventKind::ReachavoidCall { epoch: *e, target, unsafe_region: unsafe_box(), writer: WriterKind::App }
            }
            "R" | "C" | "N" => {
                let p = match item {
                    "R" => Position3::ORIGIN,
                    "C" => Position3::new(0.95, 0.0, 0.0),
                    _ => Position3::new(0.5, 0.0, 0.0),
                };
                EventKind::Pose { pos: p, truth: p }
            }
            f => {
                let value = f.starts_with('+');
                let flag = match &f[1..] {
                    "done" => Flag::Done,
                    "failed" => Flag::Failed,
                    "active" => Flag::Active,
                    other => panic!("unknown item {other}"),
                };
                EventKind::FlagChange { epoch, flag, value, writer: WriterKind::Controller }
            }
        };
        events.push(TraceEvent { t, robot: Some(RobotId(r)), kind });
    }
    let meta = robots
        .into_iter()
        .map(|r| RobotMeta { id: RobotId(r), platform: PlatformKind::Diffdrive, d_t: D_T, q_d: Q_D, sensor_period: SP })
        .collect();
    Trace { header: Some(TraceHeader::new(0, 10.0, meta)), events }
}

#[derive(Default, Clone, Copy)]
struct F {
    active: bool,
    done: bool,
    failed: bool,
}

struct Epoch<'a> {
    t0: f64,
    end: f64,
    target: Position3,
    region: Region,
    start_flags: F,
    events: Vec<&'a TraceEvent>,
}

impl Epoch<'_> {
    fn flags_at(&self, t: f64) -> F {
        let mut f = self.start_flags;
        for e in self.events.iter().filter(|e| e.t.secs() <= t) {
            if let EventKind::FlagChange { flag, value, .. } = e.kind {
                match flag {
                    Flag::Active => f.active = value,
                    Flag::Done => f.done = value,
                    Flag::Failed => f.failed = value,
                }
            }
        }
        f
    }

    fn times(&self) -> Vec<f64> {
        let mut ts = vec![self.t0];
        for e in &self.events {
            if matches!(e.kind, EventKind::Pose { .. } | EventKind::FlagChange { .. }) {
                ts.push(e.t.secs());
            }
        }
        ts.dedup();
        ts
    }

    fn samples(&self) -> Vec<(f64, bool, bool)> {
        self.events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Pose { pos, .. } => Some((
                    e.t.secs(),
                    dist(&pos, &self.target) <= Q_D,
                    dist_to_region(&pos, &self.region).is_within(Q_D),
                )),
                _ => None,
            })
            .collect()
    }
}

fn epochs_of(tr: &Trace, robot: RobotId) -> Vec<Epoch<'_>> {
    let trace_end = tr.events.iter().map(|e| e.t.secs()).fold(0.0, f64::max);
    let mut out: Vec<Epoch> = Vec::new();
    let mut carried = F::default();
    for e in tr.events.iter().filter(|e| e.robot == Some(robot)) {
        match &e.kind {
            EventKind::ReachavoidCall { target, unsafe_region, .. } => {
                if let Some(last) = out.last_mut() {
                    last.end = e.t.secs();
                    carried = last.flags_at(f64::INFINITY);
                }
                out.push(Epoch {
                    t0: e.t.secs(),
                    end: trace_end,
                    target: *target,
                    region: unsafe_region.clone(),
                    start_flags: carried,
                    events: Vec::new(),
                });
            }
            _ => {
                if let Some(last) = out.last_mut() {
                    last.events.push(e);
                }
            }
        }
    }
    out
}

fn verdict_precedes(ep: &Epoch, flag: fn(F) -> bool, pred: fn(&(f64, bool, bool)) -> bool) -> &'static str {
    let ts = ep.times();
    if !ts.iter().any(|&t| flag(ep.flags_at(t))) {
        return "VACUOUS";
    }
    let s = ep.samples();
    let ok = ts.iter().filter(|&&t| flag(ep.flags_at(t))).all(|&t| s.iter().any(|x| x.0 <= t && pred(x)));
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn verdict_persists(ep: &Epoch, flag: fn(F) -> bool, pred: fn(&(f64, bool, bool)) -> bool) -> &'static str {
    let s = ep.samples();
    let need = (D_T / SP - 1e-9).ceil() as usize;
    let eps = 1e-9;
    let antecedent = s.iter().any(|&(t1, _, _)| {
        if t1 <= ep.t0 + eps || t1 + D_T > ep.end + eps {
            return false;
        }
        let window: Vec<_> = s.iter().filter(|x| x.0 >= t1 - eps && x.0 <= t1 + D_T + eps).collect();
        window.len() >= need && window.iter().all(|x| pred(x))
    });
    if !antecedent {
        return "VACUOUS";
    }
    let last = *ep.times().last().unwrap();
    if flag(ep.flags_at(last)) {
        "PASS"
    } else {
        "FAIL"
    }
}

fn verdict_a1(ep: &Epoch) -> &'static str {
    let ts = ep.times();
    if !ts.iter().any(|&t| ep.flags_at(t).active) {
        return "VACUOUS";
    }
    for &t1 in &ts {
        for &t2 in ts.iter().filter(|&&t2| t2 >= t1) {
            let (a, b) = (ep.flags_at(t1), ep.flags_at(t2));
            if (a.done || a.failed) && b.active {
                return "FAIL";
            }
        }
    }
    "PASS"
}

pub type Verdicts = BTreeMap<(u32, u64), [&'static str; 5]>;

pub fn oracle(tr: &Trace) -> Verdicts {
    let robots: std::collections::BTreeSet<RobotId> = tr.events.iter().filter_map(|e| e.robot).collect();
    let mut out = BTreeMap::new();
    for r in robots {
        for (k, ep) in epochs_of(tr, r).iter().enumerate() {
            out.insert(
                (r.0, k as u64 + 1),
                [
                    verdict_precedes(ep, |f| f.done, |x| x.1),
                    verdict_persists(ep, |f| f.done, |x| x.1),
                    verdict_precedes(ep, |f| f.failed, |x| x.2),
                    verdict_persists(ep, |f| f.failed, |x| x.2),
                    verdict_a1(ep),
                ],
            );
        }
    }
    out
}

pub fn monitor(tr: &Trace) -> Verdicts {
    let rep = check_trace(tr, &BTreeMap::new()).unwrap();
    rep.epochs
        .iter()
        .map(|e| {
            let v = Condition::ALL.map(|c| e.results[&c].short());
            ((e.robot.0, e.epoch), v)
        })
        .collect()
}

pub struct Case {
    pub name: &'static str,
    pub src: &'static str,
    /// Expected verdicts of epoch 1 of robot 0, in D1 D2 F1 F2 A1 order.
    pub expect: [&'static str; 5],
}

pub const P: &str = "PASS";
pub const X: &str = "FAIL";
pub const V: &str = "VACUOUS";

pub fn cases() -> Vec<Case> {
    vec![
        Case { name: "empty epoch", src: "0 call", expect: [V, V, V, V, V] },
        Case { name: "active only", src: "0 call\n0 +active\n0.1 N\n0.2 N", expect: [V, V, V, V, P] },
        Case {
            name: "d1 minimal pass",
            src: "0 call\n0.1 R\n0.1 +done",
            expect: [P, V, V, V, V],
        },
        Case { name: "d1 minimal fail", src: "0 call\n0.1 N\n0.1 +done", expect: [X, V, V, V, V] },
        Case {
            name: "d1 reach sample after done",
            src: "0 call\n0.1 +done\n0.2 R",
            expect: [X, V, V, V, V],
        },
        Case {
            name: "d1 reach long before done",
            src: "0 call\n0.1 R\n0.2 N\n0.3 N\n0.4 +done",
            expect: [P, V, V, V, V],
        },
        Case {
            name: "d2 minimal pass",
            src: "0 call\n0.1 R\n0.2 R\n0.3 R\n0.4 R\n0.4 +done",
            expect: [P, P, V, V, V],
        },
        Case {
            name: "d2 minimal fail",
            src: "0 call\n0.1 R\n0.2 R\n0.3 R\n0.4 R\n0.5 N",
            expect: [V, X, V, V, V],
        },
        Case {
            name: "d2 one short of a window",
            src: "0 call\n0.1 R\n0.2 R\n0.3 R\n0.4 N",
            expect: [V, V, V, V, V],
        },
        Case {
            name: "d2 window broken in the middle",
            src: "0 call\n0.1 R\n0.2 N\n0.3 R\n0.4 R\n0.5 N",
            expect: [V, V, V, V, V],
        },
        Case {
            name: "d2 window starting at the call instant is ignored",
            src: "0 call\n0 R\n0.1 R\n0.2 R\n0.3 N",
            expect: [V, V, V, V, V],
        },
        Case {
            name: "d2 window running past the epoch end",
            src: "0 call\n0.1 R\n0.2 R\n0.3 R\n0.35 call",
            expect: [V, V, V, V, V],
        },
        Case {
            name: "d2 done set then cleared",
            src: "0 call\n0.1 R\n0.2 R\n0.3 R\n0.4 R\n0.4 +done\n0.5 -done\n0.6 N",
            expect: [P, X, V, V, V],
        },
        Case {
            name: "d2 late but holding at the end",
            src: "0 call\n0.1 R\n0.2 R\n0.3 R\n0.4 R\n0.5 R\n0.6 R\n0.9 R\n0.9 +done",
            expect: [P, P, V, V, V],
        },
        Case {
            name: "d2 missing sample inside the window",
            src: "0 call\n0.1 R\n0.4 R\n0.5 N",
            expect: [V, V, V, V, V],
        },
        Case {
            name: "f1 minimal pass",
            src: "0 call\n0.1 C\n0.1 +failed",
            expect: [V, V, P, V, V],
        },
        Case { name: "f1 minimal fail", src: "0 call\n0.1 N\n0.1 +failed", expect: [V, V, X, V, V] },
        Case {
            name: "f2 minimal pass",
            src: "0 call\n0.1 C\n0.2 C\n0.3 C\n0.4 C\n0.4 +failed",
            expect: [V, V, P, P, V],
        },
        Case {
            name: "f2 minimal fail",
            src: "0 call\n0.1 C\n0.2 C\n0.3 C\n0.4 C\n0.5 N",
            expect: [V, V, V, X, V],
        },
        Case {
            name: "f2 violated although done was set",
            src: "0 call\n0.1 R\n0.2 R\n0.3 R\n0.4 R\n0.4 +done\n0.5 C\n0.6 C\n0.7 C\n0.8 C\n0.9 N",
            expect: [P, P, V, X, V],
        },
        Case {
            name: "both predicates persist and both flags latch",
            src: "0 callnear\n0.1 C\n0.2 C\n0.3 C\n0.4 C\n0.4 +failed\n0.4 +done",
            expect: [P, P, P, P, V],
        },
        Case {
            name: "both persist, only failed latches",
            src: "0 callnear\n0.1 C\n0.2 C\n0.3 C\n0.4 C\n0.4 +failed",
            expect: [V, X, P, P, V],
        },
        Case {
            name: "a1 minimal pass",
            src: "0 call\n0 +active\n0.1 R\n0.2 R\n0.3 R\n0.4 R\n0.4 +done\n0.4 -active",
            expect: [P, P, V, V, P],
        },
        Case {
            name: "a1 minimal fail",
            src: "0 call\n0.1 R\n0.1 +done\n0.2 +active",
            expect: [P, V, V, V, X],
        },
        Case {
            name: "a1 active and done at the same instant",
            src: "0 call\n0.1 R\n0.1 +done\n0.1 +active\n0.2 -active",
            expect: [P, V, V, V, X],
        },
        Case {
            name: "a1 failed then reactivated",
            src: "0 call\n0.1 C\n0.1 +failed\n0.2 -failed\n0.3 +active",
            expect: [V, V, P, V, X],
        },
        Case {
            name: "a1 active dropped before done",
            src: "0 call\n0 +active\n0.1 R\n0.1 -active\n0.2 +done",
            expect: [P, V, V, V, P],
        },
        Case {
            name: "flags carry into the next epoch",
            src: "0 call\n0.1 R\n0.1 +done\n0.5 call\n0.6 N",
            expect: [P, V, V, V, V],
        },
        Case {
            name: "pose before a same-instant call belongs to the old epoch",
            src: "0 call\n0.1 N\n0.2 R\n0.2 call\n0.2 +done",
            expect: [V, V, V, V, V],
        },
        Case {
            name: "second robot interleaved",
            src: "0 call\n0 r1:call\n0.1 R\n0.1 r1:N\n0.1 r1:+done\n0.2 R\n0.3 R\n0.4 R\n0.4 +done",
            expect: [P, P, V, V, V],
        },
        Case {
            name: "noisy flicker never dwells",
            src: "0 call\n0.1 R\n0.2 N\n0.3 R\n0.4 N\n0.5 R\n0.6 N\n0.7 R",
            expect: [V, V, V, V, V],
        },
        Case {
            name: "crossed then reach persists",
            src: "0 call\n0.1 C\n0.2 N\n0.3 R\n0.4 R\n0.5 R\n0.6 R\n0.6 +done",
            expect: [P, P, V, V, V],
        },
        Case {
            name: "failed without any crossed",
            src: "0 call\n0 +active\n0.1 R\n0.2 +failed\n0.2 -active",
            expect: [V, V, X, V, P],
        },
    ]
}

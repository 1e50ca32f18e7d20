//! Shared memory checks computed from a trace alone, by replaying every robot's writes and
//! deliveries.

use std::collections::BTreeMap;

use roboport::dsm::{Timestamp, Value};
use roboport::geometry::{RobotId, SimTime};
use roboport::trace::{EventKind, Trace};

type Store = BTreeMap<String, (Value, Timestamp)>;

pub struct Replay {
    pub last_write: Option<SimTime>,
    /// Start of the final stretch over which every replica holds the same stamped contents.
    pub agreed_since: Option<SimTime>,
    pub stores: BTreeMap<RobotId, Store>,
}

pub fn replay(tr: &Trace) -> Replay {
    let robots: Vec<RobotId> = tr.header.as_ref().expect("header").robots.iter().map(|m| m.id).collect();
    let mut stores: BTreeMap<RobotId, Store> = robots.iter().map(|r| (*r, Store::new())).collect();
    let mut last_write = None;
    let mut agreed_since = None;
    let ev = &tr.events;
    let mut i = 0;
    while i < ev.len() {
        let t = ev[i].t;
        while i < ev.len() && ev[i].t == t {
            let e = &ev[i];
            i += 1;
            let (name, value, stamp) = match &e.kind {
                EventKind::DsmWrite { name, value, stamp } => {
                    last_write = Some(t);
                    (name, value, stamp)
                }
                EventKind::DsmDeliver { name, value, stamp, .. } => (name, value, stamp),
                _ => continue,
            };
            let store = stores.get_mut(&e.robot.expect("dsm events belong to a robot")).unwrap();
            store.insert(name.clone(), (value.clone(), *stamp));
        }
        let first = stores.values().next().unwrap();
        if stores.values().all(|s| s == first) {
            agreed_since.get_or_insert(t);
        } else {
            agreed_since = None;
        }
    }
    Replay { last_write, agreed_since, stores }
}

/// For every single-writer variable, the sequence each replica observes must be a
/// subsequence of the writer's own sequence of writes. `writer_of` names the writer.
pub fn subsequence_violations(tr: &Trace, writer_of: impl Fn(&str) -> Option<RobotId>) -> Vec<String> {
    let mut written: BTreeMap<&str, Vec<(Timestamp, &Value)>> = BTreeMap::new();
    let mut seen: BTreeMap<(&str, RobotId), Vec<(Timestamp, &Value)>> = BTreeMap::new();
    let mut out = Vec::new();
    for e in &tr.events {
        let r = e.robot.unwrap();
        match &e.kind {
            EventKind::DsmWrite { name, value, stamp } => {
                let Some(w) = writer_of(name) else { continue };
                if w != r {
                    out.push(format!("{name} written by {r}, owned by {w}"));
                }
                written.entry(name).or_default().push((*stamp, value));
            }
            EventKind::DsmDeliver { name, value, stamp, .. } if writer_of(name).is_some() => {
                seen.entry((name, r)).or_default().push((*stamp, value));
            }
            _ => {}
        }
    }
    for ((name, r), obs) in &seen {
        let Some(src) = written.get(name) else {
            out.push(format!("{name} delivered at {r} but never written"));
            continue;
        };
        let mut k = 0;
        for o in obs {
            match src[k..].iter().position(|w| w == o) {
                Some(j) => k += j + 1,
                None => {
                    out.push(format!("{name} at {r}: {o:?} is out of order or never written"));
                    break;
                }
            }
        }
    }
    out
}

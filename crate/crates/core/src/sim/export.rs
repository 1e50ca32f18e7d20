use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::geometry::{Position3, RobotId};
use crate::trace::{EventKind, Flag, Trace};

#[derive(Debug, Clone, Default)]
struct RobotView {
    epoch: u64,
    active: bool,
    done: bool,
    failed: bool,
    target: Option<Position3>,
}

pub const COLUMNS: [&str; 12] =
    ["t", "robot", "x", "y", "z", "epoch", "done", "failed", "active", "target_x", "target_y", "target_z"];

#[derive(Serialize)]
struct Row {
    t: f64,
    robot: u32,
    x: f64,
    y: f64,
    z: f64,
    epoch: u64,
    done: bool,
    failed: bool,
    active: bool,
    target_x: Option<f64>,
    target_y: Option<f64>,
    target_z: Option<f64>,
}

/// One row per pose sample, with the robot's flags and target as they stand once every
/// event at that instant has been applied. Returns the number of data rows.
pub fn export_csv(tr: &Trace, out: impl Write) -> Result<usize, csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(COLUMNS)?;
    let mut views: BTreeMap<RobotId, RobotView> = BTreeMap::new();
    let mut rows = 0;
    let mut i = 0;
    let ev = &tr.events;
    while i < ev.len() {
        let t = ev[i].t;
        let mut poses: Vec<(RobotId, Position3)> = Vec::new();
        while i < ev.len() && ev[i].t == t {
            let e = &ev[i];
            i += 1;
            let Some(r) = e.robot else { continue };
            let v = views.entry(r).or_default();
            match &e.kind {
                EventKind::Pose { pos, .. } => poses.push((r, *pos)),
                EventKind::ReachavoidCall { epoch, target, .. } => {
                    v.epoch = *epoch;
                    v.target = Some(*target);
                }
                EventKind::FlagChange { flag, value, .. } => match flag {
                    Flag::Active => v.active = *value,
                    Flag::Done => v.done = *value,
                    Flag::Failed => v.failed = *value,
                },
                _ => {}
            }
        }
        for (r, p) in poses {
            let v = &views[&r];
            w.serialize(Row {
                t: t.secs(),
                robot: r.0,
                x: p.x,
                y: p.y,
                z: p.z,
                epoch: v.epoch,
                done: v.done,
                failed: v.failed,
                active: v.active,
                target_x: v.target.map(|q| q.x),
                target_y: v.target.map(|q| q.y),
                target_z: v.target.map(|q| q.z),
            })?;
            rows += 1;
        }
    }
    w.flush()?;
    Ok(rows)
}

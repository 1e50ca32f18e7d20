use proptest::prelude::*;
use roboport::geometry::{Aabb, Position3, Region};
use roboport::planner::{plan, plan_tree, PlanOutcome, PlanParams};
use roboport::platforms::{PlatformSpec, PlatformState};
use roboport::rng::{derive_stream, Stream};
use roboport::tracker::track;

fn fb(min: [f64; 3], max: [f64; 3]) -> Aabb {
    Aabb::new(min.into(), max.into()).unwrap()
}

/// Euclidean distance from `p` to the closest point of any box, computed per axis.
fn clearance(p: &Position3, boxes: &[([f64; 3], [f64; 3])]) -> f64 {
    boxes
        .iter()
        .map(|(lo, hi)| {
            let c = [p.x, p.y, p.z];
            let mut s = 0.0;
            for k in 0..3 {
                let d = (lo[k] - c[k]).max(0.0).max(c[k] - hi[k]);
                s += d * d;
            }
            s.sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

struct Replay {
    min_clearance: f64,
    end: Position3,
    reached: bool,
}

/// Drives the platform through `waypoints` with its own tracker, advancing to the next
/// way-point inside the acceptance radius, and records the worst clearance seen at every
/// integration step.
fn replay(start: PlatformState, waypoints: &[Position3], boxes: &[([f64; 3], [f64; 3])], spec: &PlatformSpec, horizon: f64) -> Replay {
    let mut s = start;
    let mut k = 0;
    let mut worst = clearance(&s.position(), boxes);
    let per_tick = (spec.sensor_period / spec.integration_step).round() as usize;
    let ticks = (horizon / spec.sensor_period) as usize;
    for _ in 0..ticks {
        let here = s.position();
        while k + 1 < waypoints.len() && roboport::geometry::dist(&here, &waypoints[k]) <= spec.tracker.accept_radius {
            k += 1;
        }
        if k + 1 == waypoints.len() && roboport::geometry::dist(&here, &waypoints[k]) <= spec.tracker.accept_radius {
            return Replay { min_clearance: worst, end: here, reached: true };
        }
        let c = track(&s, &waypoints[k], spec);
        for _ in 0..per_tick {
            s = s.step(&c, spec.integration_step, spec, [0.0; 2]).unwrap();
            worst = worst.min(clearance(&s.position(), boxes));
        }
    }
    Replay { min_clearance: worst, end: s.position(), reached: false }
}

fn region(boxes: &[([f64; 3], [f64; 3])]) -> Region {
    Region::from_boxes(boxes.iter().map(|(a, b)| fb(*a, *b)).collect())
}

fn params(spec: &PlatformSpec, z: f64) -> PlanParams {
    PlanParams::defaults(spec.q_d, fb([-1.0, -3.0, z], [7.0, 3.0, z]))
}

#[test]
fn wall_with_gap_is_threaded_safely() {
    let boxes = [([3.0, -3.0, 0.0], [3.4, -0.4, 5.0]), ([3.0, 0.4, 0.0], [3.4, 3.0, 5.0])];
    let u = region(&boxes);
    for spec in [PlatformSpec::diffdrive(), PlatformSpec::quad()] {
        let z = spec.operating_altitude();
        let start = Position3::new(0.0, 1.5, z);
        let target = Position3::new(6.0, -1.5, z);
        let s0 = PlatformState::initial(spec.kind, start, 0.0);
        let p = params(&spec, z);
        let mut found = 0;
        for seed in 0..5 {
            let r = plan(start, s0, target, &u, &spec, &p, &mut derive_stream(seed, Stream::Planner, None));
            let PlanOutcome::PathFound(w) = r.outcome else { continue };
            found += 1;
            assert_eq!(*w.last().unwrap(), target);
            let rep = replay(s0, &w, &boxes, &spec, 200.0);
            assert!(rep.reached, "{:?} seed {seed}: replay ended at {:?}", spec.kind, rep.end);
            assert!(rep.min_clearance >= p.clearance_margin - 1e-9, "{:?} seed {seed}: clearance {}", spec.kind, rep.min_clearance);
            let ref_worst = r.reference.iter().map(|q| clearance(q, &boxes)).fold(f64::INFINITY, f64::min);
            assert!(ref_worst >= p.clearance_margin - 1e-9);
        }
        assert!(found >= 4, "{:?}: only {found}/5 plans found", spec.kind);
    }
}

#[test]
fn enclosed_target_exhausts_the_budget() {
    let (c, r, t) = (3.0, 0.8, 0.2);
    let boxes = [
        ([c - r - t, -r - t, 0.0], [c + r + t, -r, 5.0]),
        ([c - r - t, r, 0.0], [c + r + t, r + t, 5.0]),
        ([c - r - t, -r, 0.0], [c - r, r, 5.0]),
        ([c + r, -r, 0.0], [c + r + t, r, 5.0]),
    ];
    let u = region(&boxes);
    for spec in [PlatformSpec::diffdrive(), PlatformSpec::quad()] {
        let z = spec.operating_altitude();
        let start = Position3::new(0.0, 0.0, z);
        let s0 = PlatformState::initial(spec.kind, start, 0.0);
        let p = params(&spec, z);
        let (r, tree) = plan_tree(start, s0, Position3::new(c, 0.0, z), &u, &spec, &p, &mut derive_stream(9, Stream::Planner, None));
        assert_eq!(r.outcome, PlanOutcome::NoPathFound);
        assert!(r.tree_size == p.max_tree_size || r.samples == p.max_samples);
        assert!(tree.is_well_formed());
        for n in &tree.nodes {
            assert!(clearance(&n.pos, &boxes) >= p.clearance_margin - 1e-9);
        }
    }
}

#[test]
fn same_stream_same_plan() {
    let spec = PlatformSpec::diffdrive();
    let boxes = [([2.0, -1.0, 0.0], [2.5, 1.0, 5.0])];
    let u = region(&boxes);
    let s0 = PlatformState::initial(spec.kind, Position3::ORIGIN, 0.0);
    let p = params(&spec, 0.0);
    let go = || plan(Position3::ORIGIN, s0, Position3::new(4.0, 0.0, 0.0), &u, &spec, &p, &mut derive_stream(3, Stream::Planner, None));
    let (a, b) = (go(), go());
    assert_eq!(a.outcome, b.outcome);
    assert_eq!(a.reference, b.reference);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn found_paths_keep_clearance(
        bx in 1.0f64..4.0, by in -1.5f64..1.5, w in 0.2f64..1.0, h in 0.2f64..2.5,
        tx in 4.5f64..6.5, ty in -2.0f64..2.0, seed in 0u64..1000,
    ) {
        let spec = PlatformSpec::diffdrive();
        let boxes = [([bx, by - h / 2.0, 0.0], [bx + w, by + h / 2.0, 5.0])];
        let start = Position3::ORIGIN;
        let target = Position3::new(tx, ty, 0.0);
        prop_assume!(clearance(&start, &boxes) > spec.q_d && clearance(&target, &boxes) > spec.q_d);
        let s0 = PlatformState::initial(spec.kind, start, 0.0);
        let p = params(&spec, 0.0);
        let r = plan(start, s0, target, &region(&boxes), &spec, &p, &mut derive_stream(seed, Stream::Planner, None));
        if let PlanOutcome::PathFound(wp) = r.outcome {
            let rep = replay(s0, &wp, &boxes, &spec, 300.0);
            prop_assert!(rep.reached);
            prop_assert!(rep.min_clearance >= p.clearance_margin - 1e-9, "clearance {}", rep.min_clearance);
        }
    }
}

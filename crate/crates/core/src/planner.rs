//! Dynamics-aware RRT. Edges are grown by simulating the platform's own way-point tracker
//! and dynamics from the stored state at the nearest node, so every accepted edge is a
//! trajectory the robot can actually fly or drive.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{dist, dist_to_region, Aabb, Position3, Region};
use crate::platforms::{PlatformSpec, PlatformState};
use crate::rng::SimRng;
use crate::tracker::track;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanParams {
    pub max_tree_size: usize,
    /// Samples drawn before giving up even if the tree is still small.
    pub max_samples: usize,
    pub clearance_margin: f64,
    pub min_extend_dist: f64,
    pub goal_radius: f64,
    /// Probability of sampling the target itself.
    pub goal_bias: f64,
    /// Simulated seconds allowed per steering attempt.
    pub steer_horizon: f64,
    /// Simulated seconds between a plan request and its result.
    pub latency: f64,
    pub sample_bounds: Aabb,
}

impl PlanParams {
    pub fn defaults(q_d: f64, sample_bounds: Aabb) -> PlanParams {
        PlanParams {
            max_tree_size: 500,
            max_samples: 10_000,
            clearance_margin: q_d,
            min_extend_dist: q_d / 2.0,
            goal_radius: q_d,
            goal_bias: 0.1,
            steer_horizon: 10.0,
            latency: 0.2,
            sample_bounds,
        }
    }

    pub fn validate(&self, q_d: f64) -> Result<(), String> {
        if self.max_tree_size == 0 || self.max_samples == 0 {
            return Err("planner tree and sample budgets must be positive".into());
        }
        for (name, v) in [
            ("clearance_margin", self.clearance_margin),
            ("min_extend_dist", self.min_extend_dist),
            ("goal_radius", self.goal_radius),
            ("steer_horizon", self.steer_horizon),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("planner.{name} must be positive, got {v}"));
            }
        }
        if self.goal_radius < q_d {
            return Err(format!("planner.goal_radius {} must be >= q_d {q_d}", self.goal_radius));
        }
        if !(0.0..=1.0).contains(&self.goal_bias) {
            return Err("planner.goal_bias must lie in [0, 1]".into());
        }
        if !(self.latency.is_finite() && self.latency >= 0.0) {
            return Err("planner.latency must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RrtNode {
    pub pos: Position3,
    pub parent: Option<usize>,
    pub state: PlatformState,
    /// Simulated positions along the edge from the parent, one per control period.
    pub edge: Vec<Position3>,
}

#[derive(Debug, Clone)]
pub struct RrtTree {
    pub nodes: Vec<RrtNode>,
}

impl RrtTree {
    pub fn new(root: Position3, state: PlatformState) -> RrtTree {
        RrtTree { nodes: vec![RrtNode { pos: root, parent: None, state, edge: vec![root] }] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nearest(&self, p: &Position3) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, n) in self.nodes.iter().enumerate() {
            let d = dist(&n.pos, p);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    /// Node indices from the root to `i`, inclusive.
    pub fn branch(&self, mut i: usize) -> Vec<usize> {
        let mut out = vec![i];
        while let Some(p) = self.nodes[i].parent {
            out.push(p);
            i = p;
        }
        out.reverse();
        out
    }

    /// Every parent index is smaller than its child, so the parent graph is acyclic.
    pub fn is_well_formed(&self) -> bool {
        !self.nodes.is_empty()
            && self.nodes[0].parent.is_none()
            && self.nodes.iter().enumerate().skip(1).all(|(i, n)| matches!(n.parent, Some(p) if p < i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtendOutcome {
    Added(usize),
    Rejected,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanOutcome {
    PathFound(Vec<Position3>),
    NoPathFound,
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub outcome: PlanOutcome,
    pub tree_size: usize,
    pub samples: usize,
    /// Simulated positions along the returned path, root first. Empty on failure.
    pub reference: Vec<Position3>,
}

/// Simulates the tracker from `from` toward `goal`. Returns the end state and the sampled
/// trajectory if the goal is reached within the horizon with clearance kept at every
/// integration step.
pub fn steer(
    from: &PlatformState,
    goal: &Position3,
    unsafe_region: &Region,
    spec: &PlatformSpec,
    p: &PlanParams,
) -> Option<(PlatformState, Vec<Position3>)> {
    let h = spec.integration_step;
    let per_tick = (spec.sensor_period / h).round().max(1.0) as usize;
    let ticks = (p.steer_horizon / spec.sensor_period).ceil() as usize;
    let mut s = *from;
    let mut traj = Vec::with_capacity(ticks.min(256));
    for _ in 0..ticks {
        let here = s.position();
        traj.push(here);
        if dist(&here, goal) <= spec.tracker.accept_radius {
            return Some((s, traj));
        }
        let c = track(&s, goal, spec);
        for _ in 0..per_tick {
            s = s.step(&c, h, spec, [0.0; 2]).ok()?;
            if !dist_to_region(&s.position(), unsafe_region).at_least(p.clearance_margin) {
                return None;
            }
        }
    }
    None
}

/// One RRT extension toward `sample`, halving the segment from the nearest node on failure.
pub fn extend(
    tree: &mut RrtTree,
    sample: &Position3,
    unsafe_region: &Region,
    spec: &PlatformSpec,
    p: &PlanParams,
) -> ExtendOutcome {
    let near = tree.nearest(sample);
    let base = tree.nodes[near].pos;
    let mut goal = *sample;
    while dist(&base, &goal) >= p.min_extend_dist {
        if let Some(o) = connect(tree, near, &goal, unsafe_region, spec, p) {
            return o;
        }
        goal = base.midpoint(&goal);
    }
    ExtendOutcome::Rejected
}

fn connect(
    tree: &mut RrtTree,
    from: usize,
    goal: &Position3,
    unsafe_region: &Region,
    spec: &PlatformSpec,
    p: &PlanParams,
) -> Option<ExtendOutcome> {
    if !dist_to_region(goal, unsafe_region).at_least(p.clearance_margin) {
        return None;
    }
    let (state, edge) = steer(&tree.nodes[from].state, goal, unsafe_region, spec, p)?;
    tree.nodes.push(RrtNode { pos: *goal, parent: Some(from), state, edge });
    Some(ExtendOutcome::Added(tree.nodes.len() - 1))
}

fn sample_in(b: &Aabb, rng: &mut SimRng) -> Position3 {
    let mut axis = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    Position3::new(axis(b.min.x, b.max.x), axis(b.min.y, b.max.y), axis(b.min.z, b.max.z))
}

/// Greedy shortcutting of a tree branch: from each kept node, jump to the furthest later
/// node the tracker can reach directly with clearance. The result is again a sequence of
/// steer-checked edges.
pub fn shortcut(
    tree: &RrtTree,
    branch: &[usize],
    unsafe_region: &Region,
    spec: &PlatformSpec,
    p: &PlanParams,
) -> (Vec<Position3>, Vec<Position3>) {
    let root = &tree.nodes[branch[0]];
    let mut state = root.state;
    let mut reference = root.edge.clone();
    let mut waypoints = Vec::new();
    let mut at = 0;
    while at + 1 < branch.len() {
        let mut next = None;
        for j in (at + 2..branch.len()).rev() {
            if let Some(r) = steer(&state, &tree.nodes[branch[j]].pos, unsafe_region, spec, p) {
                next = Some((j, r));
                break;
            }
        }
        let (j, (s, edge)) = match next {
            Some(n) => n,
            None => {
                let n = &tree.nodes[branch[at + 1]];
                (at + 1, (n.state, n.edge.clone()))
            }
        };
        state = s;
        reference.extend(edge);
        waypoints.push(tree.nodes[branch[j]].pos);
        at = j;
    }
    (waypoints, reference)
}

fn path_result(tree: &RrtTree, goal: usize, samples: usize, unsafe_region: &Region, spec: &PlatformSpec, p: &PlanParams) -> PlanResult {
    let (waypoints, reference) = shortcut(tree, &tree.branch(goal), unsafe_region, spec, p);
    PlanResult { outcome: PlanOutcome::PathFound(waypoints), tree_size: tree.len(), samples, reference }
}

/// Grows a tree from `start` until a node can be connected exactly to `target`.
pub fn plan(
    start: Position3,
    start_state: PlatformState,
    target: Position3,
    unsafe_region: &Region,
    spec: &PlatformSpec,
    p: &PlanParams,
    rng: &mut SimRng,
) -> PlanResult {
    plan_tree(start, start_state, target, unsafe_region, spec, p, rng).0
}

/// As [`plan`], also returning the final tree.
pub fn plan_tree(
    start: Position3,
    start_state: PlatformState,
    target: Position3,
    unsafe_region: &Region,
    spec: &PlatformSpec,
    p: &PlanParams,
    rng: &mut SimRng,
) -> (PlanResult, RrtTree) {
    let mut tree = RrtTree::new(start, start_state);
    let fail = |tree: &RrtTree, samples| PlanResult {
        outcome: PlanOutcome::NoPathFound,
        tree_size: tree.len(),
        samples,
        reference: Vec::new(),
    };
    if unsafe_region.contains(&start) {
        return (fail(&tree, 0), tree);
    }
    if dist(&start, &target) <= spec.tracker.accept_radius {
        let r = PlanResult {
            outcome: PlanOutcome::PathFound(vec![target]),
            tree_size: 1,
            samples: 0,
            reference: vec![start],
        };
        return (r, tree);
    }
    let mut samples = 0;
    while tree.len() < p.max_tree_size && samples < p.max_samples {
        let sample = if samples == 0 || rng.random::<f64>() < p.goal_bias {
            target
        } else {
            sample_in(&p.sample_bounds, rng)
        };
        samples += 1;
        let ExtendOutcome::Added(i) = extend(&mut tree, &sample, unsafe_region, spec, p) else {
            continue;
        };
        let d = dist(&tree.nodes[i].pos, &target);
        if d == 0.0 {
            let r = path_result(&tree, i, samples, unsafe_region, spec, p);
            return (r, tree);
        }
        if d <= p.goal_radius {
            if let Some(ExtendOutcome::Added(g)) = connect(&mut tree, i, &target, unsafe_region, spec, p) {
                let r = path_result(&tree, g, samples, unsafe_region, spec, p);
                return (r, tree);
            }
        }
    }
    (fail(&tree, samples), tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, Stream};

    fn arena() -> Aabb {
        Aabb::new(Position3::new(-5.0, -5.0, 0.0), Position3::new(5.0, 5.0, 0.0)).unwrap()
    }

    fn dd() -> (PlatformSpec, PlanParams) {
        let s = PlatformSpec::diffdrive();
        let p = PlanParams::defaults(s.q_d, arena());
        (s, p)
    }

    fn root(s: &PlatformSpec) -> PlatformState {
        PlatformState::initial(s.kind, Position3::ORIGIN, 0.0)
    }

    fn boxr(a: [f64; 3], b: [f64; 3]) -> Region {
        Region::from_boxes(vec![Aabb::new(a.into(), b.into()).unwrap()])
    }

    #[test]
    fn extend_examples() {
        let (s, p) = dd();
        let mut t = RrtTree::new(Position3::ORIGIN, root(&s));
        let o = extend(&mut t, &Position3::new(1.0, 0.0, 0.0), &Region::empty(), &s, &p);
        assert_eq!(o, ExtendOutcome::Added(1));

        let mut t = RrtTree::new(Position3::ORIGIN, root(&s));
        let u = boxr([2.0, -0.5, 0.0], [3.0, 0.5, 1.0]);
        let o = extend(&mut t, &u.boxes[0].center().with_z(0.0), &u, &s, &p);
        // halving from the box center ends well short of the box, so something is added,
        // but never a node within the clearance margin
        if let ExtendOutcome::Added(i) = o {
            assert!(dist_to_region(&t.nodes[i].pos, &u).at_least(p.clearance_margin));
        }
        let mut t = RrtTree::new(Position3::ORIGIN, root(&s));
        assert_eq!(extend(&mut t, &Position3::ORIGIN, &Region::empty(), &s, &p), ExtendOutcome::Rejected);
    }

    #[test]
    fn sample_inside_box_adjacent_to_root_is_rejected() {
        let (s, p) = dd();
        // root clearance barely exceeds the margin, so every halved segment breaks it
        let u = boxr([0.1005, -1.0, 0.0], [2.0, 1.0, 1.0]);
        let mut t = RrtTree::new(Position3::ORIGIN, root(&s));
        assert_eq!(extend(&mut t, &Position3::new(1.0, 0.0, 0.0), &u, &s, &p), ExtendOutcome::Rejected);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn free_space_plan_reaches_target() {
        for s in [PlatformSpec::diffdrive(), PlatformSpec::quad()] {
            let alt = s.operating_altitude();
            let b = Aabb::new(Position3::new(-5.0, -5.0, alt), Position3::new(5.0, 5.0, alt)).unwrap();
            let p = PlanParams::defaults(s.q_d, b);
            let mut rng = derive_stream(1, Stream::Planner, None);
            let target = Position3::new(3.0, 0.0, alt);
            let r = plan(Position3::ORIGIN.with_z(alt), root(&s), target, &Region::empty(), &s, &p, &mut rng);
            match r.outcome {
                PlanOutcome::PathFound(w) => assert_eq!(*w.last().unwrap(), target),
                o => panic!("{:?}: {o:?}", s.kind),
            }
        }
    }

    #[test]
    fn start_inside_unsafe_fails_immediately() {
        let (s, p) = dd();
        let u = boxr([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]);
        let mut rng = derive_stream(1, Stream::Planner, None);
        let r = plan(Position3::ORIGIN, root(&s), Position3::new(3.0, 0.0, 0.0), &u, &s, &p, &mut rng);
        assert_eq!(r.outcome, PlanOutcome::NoPathFound);
        assert_eq!(r.samples, 0);
    }

    #[test]
    fn planning_is_deterministic() {
        let (s, p) = dd();
        let u = boxr([1.0, -1.0, 0.0], [1.5, 4.0, 1.0]);
        let go = || {
            let mut rng = derive_stream(9, Stream::Planner, None);
            let (r, t) = plan_tree(Position3::ORIGIN, root(&s), Position3::new(3.0, 0.0, 0.0), &u, &s, &p, &mut rng);
            (r.outcome, t.nodes.iter().map(|n| n.pos).collect::<Vec<_>>())
        };
        assert_eq!(go(), go());
    }
}

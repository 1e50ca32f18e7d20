//! The per-robot variable holder and the reach-avoid controller behind `doReachAvoid`.
//!
//! The application writes `targetPos` / `unsafePos`, the sensor task writes `currentPos`,
//! and only the controller writes `active`, `done` and `failed`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{dist, dist_to_region, Position3, Region, SimTime};
use crate::planner::{plan, PlanOutcome, PlanParams, PlanResult};
use crate::platforms::{Command, PlatformSpec, PlatformState};
use crate::rng::SimRng;
use crate::tracker::{hold, track};
pub use crate::trace::{Flag, Predicate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableHolder {
    pub target: Option<Position3>,
    pub current: Position3,
    pub unsafe_region: Region,
    pub active: bool,
    pub done: bool,
    pub failed: bool,
    pub epoch: u64,
}

impl VariableHolder {
    pub fn new(current: Position3) -> VariableHolder {
        VariableHolder {
            target: None,
            current,
            unsafe_region: Region::empty(),
            active: false,
            done: false,
            failed: false,
            epoch: 0,
        }
    }

    pub fn flag(&self, f: Flag) -> bool {
        match f {
            Flag::Active => self.active,
            Flag::Done => self.done,
            Flag::Failed => self.failed,
        }
    }

    fn set(&mut self, f: Flag, v: bool, out: &mut Vec<ControllerEvent>) {
        let slot = match f {
            Flag::Active => &mut self.active,
            Flag::Done => &mut self.done,
            Flag::Failed => &mut self.failed,
        };
        if *slot != v {
            *slot = v;
            out.push(ControllerEvent::Flag { flag: f, value: v });
        }
    }
}

/// Fires once a predicate has held at every tick for at least `d_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwellDetector {
    since: Option<SimTime>,
    d_t: SimTime,
}

impl DwellDetector {
    pub fn new(d_t: f64) -> DwellDetector {
        DwellDetector { since: None, d_t: SimTime::from_secs(d_t) }
    }

    pub fn observe(&mut self, holds: bool, now: SimTime) -> bool {
        if !holds {
            self.since = None;
            return false;
        }
        let since = *self.since.get_or_insert(now);
        now.saturating_sub(since) >= self.d_t
    }

    pub fn reset(&mut self) {
        self.since = None;
    }

    pub fn since(&self) -> Option<SimTime> {
        self.since
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerEvent {
    Flag { flag: Flag, value: bool },
    Predicate { predicate: Predicate, value: bool },
    Plan { outcome: PlanOutcome, tree_size: usize, samples: usize, requested_at: SimTime },
}

struct PendingPlan {
    ready_at: SimTime,
    requested_at: SimTime,
    result: PlanResult,
}

pub struct Controller {
    spec: PlatformSpec,
    params: PlanParams,
    vh: VariableHolder,
    reach: DwellDetector,
    crossed: DwellDetector,
    reach_now: bool,
    crossed_now: bool,
    planner_rng: SimRng,
    noise_rng: SimRng,
    path: Vec<Position3>,
    wp_index: usize,
    reference: Vec<Position3>,
    pending: Option<PendingPlan>,
    replan: bool,
    /// Where the robot was when the planner last gave up.
    stuck_at: Option<Position3>,
    hold_point: Position3,
    plans: usize,
}

impl Controller {
    pub fn new(spec: PlatformSpec, params: PlanParams, start: Position3, planner_rng: SimRng, noise_rng: SimRng) -> Controller {
        Controller {
            reach: DwellDetector::new(spec.d_t),
            crossed: DwellDetector::new(spec.d_t),
            spec,
            params,
            vh: VariableHolder::new(start),
            reach_now: false,
            crossed_now: false,
            planner_rng,
            noise_rng,
            path: Vec::new(),
            wp_index: 0,
            reference: Vec::new(),
            pending: None,
            replan: false,
            stuck_at: None,
            hold_point: start,
            plans: 0,
        }
    }

    pub fn vars(&self) -> &VariableHolder {
        &self.vh
    }

    pub fn spec(&self) -> &PlatformSpec {
        &self.spec
    }

    pub fn path(&self) -> &[Position3] {
        &self.path
    }

    pub fn plans_started(&self) -> usize {
        self.plans
    }

    pub fn plan_in_flight(&self) -> bool {
        self.pending.is_some()
    }

    /// `targetPos := x; unsafePos := U`, opening a new epoch.
    pub fn do_reach_avoid(&mut self, x: Position3, u: Region) -> Vec<ControllerEvent> {
        let mut out = Vec::new();
        self.vh.target = Some(x);
        self.vh.unsafe_region = u;
        self.vh.epoch += 1;
        self.vh.set(Flag::Done, false, &mut out);
        self.vh.set(Flag::Failed, false, &mut out);
        self.vh.set(Flag::Active, true, &mut out);
        self.reach.reset();
        self.crossed.reset();
        self.reach_now = false;
        self.crossed_now = false;
        self.pending = None;
        self.stuck_at = None;
        self.replan = true;
        out
    }

    /// `currentPos := true_pos`, perturbed in the horizontal plane by at most `sensor_noise`.
    pub fn sensor_update(&mut self, true_pos: Position3) {
        let b = self.spec.sensor_noise;
        let mut p = true_pos;
        if b > 0.0 {
            let r = b * self.noise_rng.random::<f64>().sqrt();
            let a = self.noise_rng.random::<f64>() * std::f64::consts::TAU;
            p.x += r * a.cos();
            p.y += r * a.sin();
        }
        self.vh.current = p;
    }

    pub fn reach_holds(&self) -> bool {
        self.vh.target.is_some_and(|t| dist(&self.vh.current, &t) <= self.spec.q_d)
    }

    pub fn crossed_holds(&self) -> bool {
        self.vh.target.is_some() && dist_to_region(&self.vh.current, &self.vh.unsafe_region).is_within(self.spec.q_d)
    }

    /// One control period: plan bookkeeping, predicate dwell, flags, then the low-level command.
    pub fn tick(&mut self, state: &PlatformState, now: SimTime) -> (Command, Vec<ControllerEvent>) {
        let mut out = Vec::new();
        let mut view = *state;
        view.set_position(self.vh.current);

        if self.vh.target.is_some() && !self.vh.done && !self.vh.failed && self.pending.is_none() {
            let deviated = !self.path.is_empty() && self.deviation() > 2.0 * self.spec.q_d;
            let moved = self.stuck_at.is_some_and(|p| dist(&p, &self.vh.current) > 2.0 * self.spec.q_d);
            if self.replan || deviated || moved {
                self.start_plan(&view, now);
            }
        }
        if self.pending.as_ref().is_some_and(|p| p.ready_at <= now) {
            let p = self.pending.take().expect("checked above");
            self.apply_plan(p, &mut out);
        }

        let reach = self.reach_holds();
        let crossed = self.crossed_holds();
        for (pred, now_v, was) in [
            (Predicate::Reach, reach, &mut self.reach_now),
            (Predicate::Crossed, crossed, &mut self.crossed_now),
        ] {
            if now_v != *was {
                *was = now_v;
                out.push(ControllerEvent::Predicate { predicate: pred, value: now_v });
            }
        }
        let reach_fired = self.reach.observe(reach, now);
        let crossed_fired = self.crossed.observe(crossed, now);
        // Each flag latches on its own predicate for the rest of the epoch; failed is decided first.
        if crossed_fired && !self.vh.failed {
            self.vh.set(Flag::Failed, true, &mut out);
            self.vh.set(Flag::Active, false, &mut out);
            self.hold_point = self.vh.current;
            self.path.clear();
            self.pending = None;
        }
        if reach_fired && !self.vh.done {
            self.vh.set(Flag::Done, true, &mut out);
            self.vh.set(Flag::Active, false, &mut out);
        }

        let mut idx = self.wp_index;
        let cmd = self.command(&view, &mut idx);
        self.wp_index = idx;
        (cmd, out)
    }

    fn command(&self, s: &PlatformState, idx: &mut usize) -> Command {
        if self.path.is_empty() {
            return hold(s, &self.hold_point, &self.spec);
        }
        let here = s.position();
        while *idx + 1 < self.path.len() && dist(&here, &self.path[*idx]) <= self.spec.tracker.accept_radius {
            *idx += 1;
        }
        track(s, &self.path[*idx], &self.spec)
    }

    /// Distance from `currentPos` to the reference trajectory of the executing path.
    fn deviation(&self) -> f64 {
        let p = self.vh.current;
        if self.reference.len() < 2 {
            return self.reference.first().map_or(0.0, |r| dist(r, &p));
        }
        self.reference
            .windows(2)
            .map(|w| {
                let d = w[1] - w[0];
                let l2 = d.dot(&d);
                let t = if l2 > 0.0 { ((p - w[0]).dot(&d) / l2).clamp(0.0, 1.0) } else { 0.0 };
                dist(&(w[0] + d * t), &p)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn start_plan(&mut self, view: &PlatformState, now: SimTime) {
        self.replan = false;
        self.plans += 1;
        // plan from where the current executor will have taken the robot when the result lands
        let mut s = *view;
        let mut idx = self.wp_index;
        let h = self.spec.integration_step;
        let per_tick = (self.spec.sensor_period / h).round().max(1.0) as usize;
        let ticks = (self.params.latency / self.spec.sensor_period).round() as usize;
        for _ in 0..ticks {
            let c = self.command(&s, &mut idx);
            for _ in 0..per_tick {
                s = s.step(&c, h, &self.spec, [0.0; 2]).unwrap_or(s);
            }
        }
        let target = self.vh.target.expect("planning requires a target");
        let result = plan(s.position(), s, target, &self.vh.unsafe_region, &self.spec, &self.params, &mut self.planner_rng);
        self.pending = Some(PendingPlan {
            ready_at: now + SimTime::from_secs(self.params.latency),
            requested_at: now,
            result,
        });
    }

    fn apply_plan(&mut self, p: PendingPlan, out: &mut Vec<ControllerEvent>) {
        out.push(ControllerEvent::Plan {
            outcome: p.result.outcome.clone(),
            tree_size: p.result.tree_size,
            samples: p.result.samples,
            requested_at: p.requested_at,
        });
        match p.result.outcome {
            PlanOutcome::PathFound(w) => {
                self.path = w;
                self.wp_index = 0;
                self.reference = p.result.reference;
                self.stuck_at = None;
                if !self.vh.done && !self.vh.failed {
                    self.vh.set(Flag::Active, true, out);
                }
            }
            PlanOutcome::NoPathFound => {
                self.path.clear();
                self.reference.clear();
                self.hold_point = self.vh.current;
                self.stuck_at = Some(self.vh.current);
                self.vh.set(Flag::Active, false, out);
            }
        }
    }
}

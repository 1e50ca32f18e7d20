//! Proportional way-point trackers, one per platform. Each maps the current state and one
//! way-point to a low-level command; they know nothing about unsafe regions.

use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, Position3};
use crate::platforms::{Command, FlightPhase, Limits, PlatformSpec, PlatformState, QuadState, DiffDriveState};

/// Gains of both trackers; each platform reads the fields it needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerGains {
    /// Turn rate per radian of heading error, 1/s.
    pub k_turn: f64,
    /// Forward speed per meter of distance, 1/s.
    pub k_speed: f64,
    pub v_max: f64,
    /// Heading error above which the ground robot turns in place, rad.
    pub turn_threshold: f64,
    /// Quad: tilt per meter of position error, rad/m.
    pub k_xy: f64,
    /// Quad: tilt per m/s of velocity error, rad s/m. Damps the position loop.
    pub k_vel: f64,
    pub tilt_max: f64,
    /// Quad: climb rate per meter of altitude error, 1/s.
    pub k_z: f64,
    pub accept_radius: f64,
}

impl TrackerGains {
    pub fn diffdrive_defaults(q_d: f64) -> TrackerGains {
        TrackerGains {
            k_turn: 2.0,
            k_speed: 1.0,
            v_max: 0.5,
            turn_threshold: 0.5,
            k_xy: 0.0,
            k_vel: 0.0,
            tilt_max: 0.0,
            k_z: 0.0,
            accept_radius: 0.6 * q_d,
        }
    }

    pub fn quad_defaults(q_d: f64) -> TrackerGains {
        TrackerGains {
            k_turn: 0.0,
            k_speed: 0.0,
            v_max: 1.5,
            turn_threshold: 0.0,
            k_xy: 0.06,
            k_vel: 0.14,
            tilt_max: 0.35,
            k_z: 1.0,
            accept_radius: 0.6 * q_d,
        }
    }

    pub fn validate(&self, q_d: f64) -> Result<(), String> {
        if !(self.accept_radius > 0.0 && self.accept_radius <= q_d) {
            return Err(format!("tracker.accept_radius must lie in (0, q_d], got {}", self.accept_radius));
        }
        if !(self.v_max > 0.0) {
            return Err("tracker.v_max must be positive".into());
        }
        if !(self.tilt_max >= 0.0 && self.tilt_max < std::f64::consts::FRAC_PI_2) {
            return Err("tracker.tilt_max must lie in [0, pi/2)".into());
        }
        Ok(())
    }
}

fn clip(v: f64, bound: f64) -> f64 {
    v.clamp(-bound, bound)
}

pub fn track_step_diffdrive(s: &DiffDriveState, wp: &Position3, g: &TrackerGains, l: &Limits) -> Command {
    let (dx, dy) = (wp.x - s.x, wp.y - s.y);
    let d = dx.hypot(dy);
    if d <= g.accept_radius {
        return Command::Straight { v_ref: 0.0 };
    }
    let err = normalize_angle(dy.atan2(dx) - s.theta);
    let omega = clip(g.k_turn * err, l.a_ref);
    if err.abs() > g.turn_threshold {
        return Command::Turn { a_ref: omega };
    }
    let v = (g.k_speed * d).min(g.v_max).min(l.v_ref);
    if omega.abs() < 1e-9 {
        Command::Straight { v_ref: v }
    } else {
        Command::Curve { v_ref: v, r: v / omega }
    }
}

pub fn track_step_quad(s: &QuadState, wp: &Position3, g: &TrackerGains, l: &Limits) -> Command {
    if matches!(s.phase, FlightPhase::Grounded | FlightPhase::TakingOff) {
        return Command::TakeOff;
    }
    let (ex, ey) = (wp.x - s.x, wp.y - s.y);
    // velocity set-point proportional to position error, capped at v_max
    let mut vdx = ex * g.k_xy / g.k_vel;
    let mut vdy = ey * g.k_xy / g.k_vel;
    let vd = vdx.hypot(vdy);
    if vd > g.v_max {
        vdx *= g.v_max / vd;
        vdy *= g.v_max / vd;
    }
    // world-frame tilt demand
    let mut tx = g.k_vel * (vdx - s.vx);
    let mut ty = g.k_vel * (vdy - s.vy);
    let tn = tx.hypot(ty);
    if tn > g.tilt_max {
        tx *= g.tilt_max / tn;
        ty *= g.tilt_max / tn;
    }
    // Small-angle inverse of the translational rows: [[c, s], [s, c]] [pitch, roll] = [-tx, ty].
    let (c, sn) = (s.psi.cos(), s.psi.sin());
    let det = c * c - sn * sn;
    let (pitch, roll, yaw) = if det.abs() < 0.3 {
        // near-singular yaw: level out and steer yaw back to zero
        (0.0, 0.0, 0.0)
    } else {
        ((-c * tx - sn * ty) / det, (sn * tx + c * ty) / det, s.psi)
    };
    let gaz = clip(g.k_z * (wp.z - s.z), l.gaz);
    Command::SetAttitude {
        yaw,
        pitch: clip(pitch, l.theta_ref.min(g.tilt_max)),
        roll: clip(roll, l.phi_ref.min(g.tilt_max)),
        gaz,
    }
}

/// Tracker dispatch for any platform state.
pub fn track(state: &PlatformState, wp: &Position3, spec: &PlatformSpec) -> Command {
    let cmd = match state {
        PlatformState::Diffdrive(s) => track_step_diffdrive(s, wp, &spec.tracker, &spec.limits),
        PlatformState::Quad(s) => track_step_quad(s, wp, &spec.tracker, &spec.limits),
    };
    debug_assert!(cmd.within(&spec.limits), "tracker exceeded limits: {cmd:?}");
    cmd
}

/// Command that keeps the platform where it is.
pub fn hold(state: &PlatformState, at: &Position3, spec: &PlatformSpec) -> Command {
    match state {
        PlatformState::Diffdrive(_) => Command::Straight { v_ref: 0.0 },
        PlatformState::Quad(q) if !q.airborne() => Command::Hover,
        PlatformState::Quad(q) if q.phase == FlightPhase::TakingOff => Command::TakeOff,
        PlatformState::Quad(_) => track(state, at, spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, Stream};
    use rand::Rng;

    fn dd() -> PlatformSpec {
        PlatformSpec::diffdrive()
    }
    fn quad() -> PlatformSpec {
        PlatformSpec::quad()
    }

    #[test]
    fn diffdrive_examples() {
        let s = DiffDriveState::default();
        let spec = dd();
        match track_step_diffdrive(&s, &Position3::new(1.0, 0.0, 0.0), &spec.tracker, &spec.limits) {
            Command::Straight { v_ref } => assert!(v_ref > 0.0),
            c => panic!("expected straight, got {c:?}"),
        }
        let c = track_step_diffdrive(&s, &Position3::new(-1.0, 0.0, 0.0), &spec.tracker, &spec.limits);
        assert!(matches!(c, Command::Turn { .. }));
        let c = track_step_diffdrive(&s, &Position3::new(0.01, 0.0, 0.0), &spec.tracker, &spec.limits);
        assert_eq!(c, Command::Straight { v_ref: 0.0 });
    }

    #[test]
    fn quad_examples() {
        let spec = quad();
        let g = QuadState::default();
        assert_eq!(track_step_quad(&g, &Position3::new(3.0, 0.0, 1.0), &spec.tracker, &spec.limits), Command::TakeOff);
        let h = QuadState::hovering_at(Position3::new(1.0, 1.0, 1.0));
        let c = track_step_quad(&h, &Position3::new(1.0, 1.0, 1.0), &spec.tracker, &spec.limits);
        assert_eq!(c, Command::SetAttitude { yaw: 0.0, pitch: 0.0, roll: 0.0, gaz: 0.0 });
        match track_step_quad(&h, &Position3::new(1.0, 1.0, 2.0), &spec.tracker, &spec.limits) {
            Command::SetAttitude { pitch, roll, gaz, .. } => {
                assert!(gaz > 0.0);
                assert_eq!((pitch, roll), (0.0, 0.0));
            }
            c => panic!("unexpected {c:?}"),
        }
    }

    fn converges(spec: &PlatformSpec, start: PlatformState, wp: Position3) -> Option<f64> {
        let steps_per_tick = (spec.sensor_period / spec.integration_step).round() as usize;
        let mut s = start;
        for tick in 0..600 {
            if (s.position() - wp).norm() <= spec.tracker.accept_radius {
                return Some(f64::from(tick) * spec.sensor_period);
            }
            let c = track(&s, &wp, spec);
            assert!(c.within(&spec.limits));
            for _ in 0..steps_per_tick {
                s = s.step(&c, spec.integration_step, spec, [0.0; 2]).unwrap();
            }
        }
        None
    }

    #[test]
    fn closed_loop_convergence_both_platforms() {
        let mut rng = derive_stream(11, Stream::Planner, None);
        for trial in 0..20 {
            for spec in [dd(), quad()] {
                let r = 10.0 * rng.random::<f64>().sqrt();
                let a = rng.random::<f64>() * std::f64::consts::TAU;
                let heading = rng.random::<f64>() * std::f64::consts::TAU;
                let alt = spec.operating_altitude();
                let start = PlatformState::initial(spec.kind, Position3::new(r * a.cos(), r * a.sin(), 0.0), heading);
                let wp = Position3::new(0.0, 0.0, alt);
                let t = converges(&spec, start, wp);
                assert!(t.is_some(), "trial {trial} on {:?} did not converge", spec.kind);
            }
        }
    }

    #[test]
    fn tracker_is_pure() {
        let spec = quad();
        let s = PlatformState::Quad(QuadState { vx: 0.3, vy: -0.2, ..QuadState::hovering_at(Position3::new(0.0, 0.0, 1.0)) });
        let wp = Position3::new(2.0, -1.0, 1.0);
        assert_eq!(track(&s, &wp, &spec), track(&s, &wp, &spec));
    }
}

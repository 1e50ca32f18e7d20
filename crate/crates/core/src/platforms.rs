//! Platform dynamics: a differential-drive ground robot and a quadrotor, their low-level
//! command sets, and fixed-step explicit Euler integration.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, Position3};
use crate::rng::SimRng;
use crate::tracker::TrackerGains;

/// Nominal gravity term of the quadrotor thrust model.
pub const THRUST_OFFSET: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlatformKind {
    #[serde(alias = "diff_drive", alias = "irobot")]
    Diffdrive,
    #[serde(alias = "quadrotor", alias = "ardrone")]
    Quad,
}

impl PlatformKind {
    pub fn name(self) -> &'static str {
        match self {
            PlatformKind::Diffdrive => "diffdrive",
            PlatformKind::Quad => "quad",
        }
    }
}

/// Saturation bounds on command references.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    /// m/s
    pub v_ref: f64,
    /// rad/s for ground turns; rad for the quad yaw reference
    pub a_ref: f64,
    pub theta_ref: f64,
    pub phi_ref: f64,
    /// m/s
    pub gaz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformSpec {
    pub kind: PlatformKind,
    /// kg
    pub mass: f64,
    /// 1/s, attitude proportional gain
    pub gain: f64,
    pub limits: Limits,
    /// Dwell time in seconds.
    pub d_t: f64,
    /// Quantization distance in meters.
    pub q_d: f64,
    pub sensor_period: f64,
    pub integration_step: f64,
    /// Bound on the position sensor error, meters. Zero disables noise.
    pub sensor_noise: f64,
    /// Quad cruise altitude reached by takeOff, meters.
    pub hover_altitude: f64,
    /// Quad takeOff / land ramp rate, m/s.
    pub vertical_rate: f64,
    pub tracker: TrackerGains,
}

impl PlatformSpec {
    pub fn diffdrive() -> PlatformSpec {
        let q_d = 0.10;
        PlatformSpec {
            kind: PlatformKind::Diffdrive,
            mass: 1.0,
            gain: 2.0,
            limits: Limits { v_ref: 0.5, a_ref: 2.0, theta_ref: 0.0, phi_ref: 0.0, gaz: 0.0 },
            d_t: 0.3,
            q_d,
            sensor_period: 0.1,
            integration_step: 0.001,
            sensor_noise: 0.0,
            hover_altitude: 0.0,
            vertical_rate: 0.0,
            tracker: TrackerGains::diffdrive_defaults(q_d),
        }
    }

    pub fn quad() -> PlatformSpec {
        let q_d = 0.15;
        PlatformSpec {
            kind: PlatformKind::Quad,
            mass: 1.0,
            gain: 2.0,
            limits: Limits { v_ref: 1.5, a_ref: std::f64::consts::PI, theta_ref: 0.35, phi_ref: 0.35, gaz: 1.0 },
            d_t: 0.5,
            q_d,
            sensor_period: 0.1,
            integration_step: 0.001,
            sensor_noise: 0.0,
            hover_altitude: 1.0,
            vertical_rate: 0.5,
            tracker: TrackerGains::quad_defaults(q_d),
        }
    }

    pub fn for_kind(kind: PlatformKind) -> PlatformSpec {
        match kind {
            PlatformKind::Diffdrive => PlatformSpec::diffdrive(),
            PlatformKind::Quad => PlatformSpec::quad(),
        }
    }

    /// Altitude at which the platform does its work: 0 on the ground, cruise altitude for quads.
    pub fn operating_altitude(&self) -> f64 {
        match self.kind {
            PlatformKind::Diffdrive => 0.0,
            PlatformKind::Quad => self.hover_altitude,
        }
    }

    pub fn quad_params(&self) -> QuadParams {
        QuadParams {
            mass: self.mass,
            gain: self.gain,
            hover_altitude: self.hover_altitude,
            vertical_rate: self.vertical_rate,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("mass", self.mass),
            ("gain", self.gain),
            ("d_t", self.d_t),
            ("q_d", self.q_d),
            ("sensor_period", self.sensor_period),
            ("integration_step", self.integration_step),
            ("limits.v_ref", self.limits.v_ref),
            ("limits.a_ref", self.limits.a_ref),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.kind == PlatformKind::Quad {
            for (name, v) in [
                ("limits.theta_ref", self.limits.theta_ref),
                ("limits.phi_ref", self.limits.phi_ref),
                ("limits.gaz", self.limits.gaz),
                ("hover_altitude", self.hover_altitude),
                ("vertical_rate", self.vertical_rate),
            ] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(format!("{name} must be positive, got {v}"));
                }
            }
        }
        if !(self.sensor_noise.is_finite() && self.sensor_noise >= 0.0) {
            return Err("sensor_noise must be >= 0".into());
        }
        if self.integration_step > self.sensor_period {
            return Err("integration_step must not exceed sensor_period".into());
        }
        self.tracker.validate(self.q_d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadParams {
    pub mass: f64,
    pub gain: f64,
    pub hover_altitude: f64,
    pub vertical_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiffDriveState {
    pub x: f64,
    pub y: f64,
    /// Heading in `(-pi, pi]`.
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlightPhase {
    #[default]
    Grounded,
    TakingOff,
    Flying,
    Landing,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QuadState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub vx: f64,
    pub vy: f64,
    /// yaw
    pub psi: f64,
    /// pitch
    pub theta: f64,
    /// roll
    pub phi: f64,
    pub phase: FlightPhase,
}

impl QuadState {
    pub fn grounded_at(x: f64, y: f64) -> QuadState {
        QuadState { x, y, ..QuadState::default() }
    }

    pub fn hovering_at(p: Position3) -> QuadState {
        QuadState { x: p.x, y: p.y, z: p.z, phase: FlightPhase::Flying, ..QuadState::default() }
    }

    pub fn airborne(&self) -> bool {
        self.phase != FlightPhase::Grounded
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlatformState {
    Diffdrive(DiffDriveState),
    Quad(QuadState),
}

impl PlatformState {
    /// Initial state at `p`: quads above the ground start hovering, otherwise grounded.
    pub fn initial(kind: PlatformKind, p: Position3, heading: f64) -> PlatformState {
        match kind {
            PlatformKind::Diffdrive => {
                PlatformState::Diffdrive(DiffDriveState { x: p.x, y: p.y, theta: normalize_angle(heading) })
            }
            PlatformKind::Quad => {
                let mut s = if p.z > 0.0 { QuadState::hovering_at(p) } else { QuadState::grounded_at(p.x, p.y) };
                s.psi = normalize_angle(heading);
                PlatformState::Quad(s)
            }
        }
    }

    pub fn position(&self) -> Position3 {
        match self {
            PlatformState::Diffdrive(s) => Position3::new(s.x, s.y, 0.0),
            PlatformState::Quad(s) => Position3::new(s.x, s.y, s.z),
        }
    }

    pub fn set_position(&mut self, p: Position3) {
        match self {
            PlatformState::Diffdrive(s) => {
                s.x = p.x;
                s.y = p.y;
            }
            PlatformState::Quad(s) => {
                s.x = p.x;
                s.y = p.y;
                s.z = p.z;
            }
        }
    }

    pub fn kind(&self) -> PlatformKind {
        match self {
            PlatformState::Diffdrive(_) => PlatformKind::Diffdrive,
            PlatformState::Quad(_) => PlatformKind::Quad,
        }
    }

    /// One integration step of the platform's dynamics.
    pub fn step(&self, c: &Command, h: f64, spec: &PlatformSpec, disturbance: [f64; 2]) -> Result<PlatformState, PlatformError> {
        Ok(match self {
            PlatformState::Diffdrive(s) => PlatformState::Diffdrive(step_diffdrive(s, c, h)?),
            PlatformState::Quad(s) => PlatformState::Quad(step_quad(s, c, h, &spec.quad_params(), disturbance)?),
        })
    }
}

/// Low-level commands. The first three drive the ground robot; the rest fly the quad.
/// `SetAttitude` bundles the quad's combinable yaw / pitch / roll / gaz setters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Command {
    Straight { v_ref: f64 },
    Turn { a_ref: f64 },
    /// Arc of signed radius `r`; positive turns left.
    Curve { v_ref: f64, r: f64 },
    TakeOff,
    Land,
    Hover,
    SetAttitude { yaw: f64, pitch: f64, roll: f64, gaz: f64 },
}

impl Command {
    pub fn is_quad(&self) -> bool {
        matches!(self, Command::TakeOff | Command::Land | Command::Hover | Command::SetAttitude { .. })
    }

    /// Whether every reference lies within `l`.
    pub fn within(&self, l: &Limits) -> bool {
        let ok = |v: f64, m: f64| v.abs() <= m + 1e-12;
        match *self {
            Command::Straight { v_ref } => ok(v_ref, l.v_ref),
            Command::Turn { a_ref } => ok(a_ref, l.a_ref),
            Command::Curve { v_ref, r } => ok(v_ref, l.v_ref) && r != 0.0 && ok(v_ref / r, l.a_ref),
            Command::SetAttitude { pitch, roll, gaz, .. } => {
                ok(pitch, l.theta_ref) && ok(roll, l.phi_ref) && ok(gaz, l.gaz)
            }
            Command::TakeOff | Command::Land | Command::Hover => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlatformError {
    #[error("command {0} is not available on this platform")]
    WrongPlatformCommand(&'static str),
    #[error("setAttitude issued while grounded")]
    CommandWhileGrounded,
}

/// Unicycle kinematics: `x' = v cos(theta)`, `y' = v sin(theta)`, `theta' = omega`.
pub fn step_diffdrive(s: &DiffDriveState, c: &Command, h: f64) -> Result<DiffDriveState, PlatformError> {
    let (v, omega) = match *c {
        Command::Straight { v_ref } => (v_ref, 0.0),
        Command::Turn { a_ref } => (0.0, a_ref),
        Command::Curve { v_ref, r } => (v_ref, v_ref / r),
        _ => return Err(PlatformError::WrongPlatformCommand("quad command")),
    };
    Ok(DiffDriveState {
        x: s.x + v * s.theta.cos() * h,
        y: s.y + v * s.theta.sin() * h,
        theta: normalize_angle(s.theta + omega * h),
    })
}

/// Translational accelerations of the quad for the given attitude and gaz, without disturbance.
pub fn quad_acceleration(psi: f64, theta: f64, phi: f64, gaz: f64, mass: f64) -> (f64, f64) {
    let thrust = (gaz + THRUST_OFFSET) / phi.cos() / theta.cos();
    let ax = -thrust * (phi.sin() * psi.sin() + phi.cos() * theta.sin() * psi.cos()) / mass;
    let ay = thrust * (phi.sin() * psi.cos() + phi.cos() * theta.sin() * psi.sin()) / mass;
    (ax, ay)
}

pub fn step_quad(
    s: &QuadState,
    c: &Command,
    h: f64,
    p: &QuadParams,
    disturbance: [f64; 2],
) -> Result<QuadState, PlatformError> {
    let relax = |a: f64, r: f64| normalize_angle(a + p.gain * (r - a) * h);
    let mut n = *s;
    match (*c, s.phase) {
        (Command::Straight { .. } | Command::Turn { .. } | Command::Curve { .. }, _) => {
            return Err(PlatformError::WrongPlatformCommand("ground command"));
        }
        (Command::SetAttitude { .. }, FlightPhase::Grounded) => return Err(PlatformError::CommandWhileGrounded),
        (Command::Hover | Command::Land, FlightPhase::Grounded) => {}
        (Command::TakeOff, _) => {
            if s.phase == FlightPhase::Flying && s.z >= p.hover_altitude {
                return step_quad(s, &Command::Hover, h, p, disturbance);
            }
            n.vx = 0.0;
            n.vy = 0.0;
            n.theta = relax(s.theta, 0.0);
            n.phi = relax(s.phi, 0.0);
            n.z = (s.z + p.vertical_rate * h).min(p.hover_altitude);
            n.phase = if n.z >= p.hover_altitude { FlightPhase::Flying } else { FlightPhase::TakingOff };
        }
        (Command::Land, _) => {
            n.vx = 0.0;
            n.vy = 0.0;
            n.theta = relax(s.theta, 0.0);
            n.phi = relax(s.phi, 0.0);
            n.z = (s.z - p.vertical_rate * h).max(0.0);
            n.phase = FlightPhase::Landing;
            if n.z <= 0.0 {
                n = QuadState { x: n.x, y: n.y, psi: n.psi, ..QuadState::default() };
            }
        }
        (Command::Hover, _) => {
            let hold = Command::SetAttitude { yaw: s.psi, pitch: 0.0, roll: 0.0, gaz: 0.0 };
            return step_quad(s, &hold, h, p, disturbance);
        }
        (Command::SetAttitude { yaw, pitch, roll, gaz }, _) => {
            let (ax, ay) = quad_acceleration(s.psi, s.theta, s.phi, gaz, p.mass);
            n.x = s.x + s.vx * h;
            n.y = s.y + s.vy * h;
            n.z = (s.z + gaz * h).max(0.0);
            n.vx = s.vx + (ax + disturbance[0]) * h;
            n.vy = s.vy + (ay + disturbance[1]) * h;
            // the yaw row compares the yaw reference with the yaw angle itself
            n.psi = relax(s.psi, yaw);
            n.theta = relax(s.theta, pitch);
            n.phi = relax(s.phi, roll);
            n.phase = FlightPhase::Flying;
        }
    }
    Ok(n)
}

/// Seeded, bounded horizontal wind acting on quads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceModel {
    /// Bound on the random gust acceleration magnitude, m/s^2.
    #[serde(default)]
    pub max_accel: f64,
    /// Seconds between gust changes.
    #[serde(default = "DisturbanceModel::default_gust_period")]
    pub gust_period: f64,
    /// Constant wind acceleration added to every gust, m/s^2.
    #[serde(default)]
    pub bias: [f64; 2],
}

impl Default for DisturbanceModel {
    fn default() -> Self {
        DisturbanceModel { max_accel: 0.0, gust_period: Self::default_gust_period(), bias: [0.0, 0.0] }
    }
}

impl DisturbanceModel {
    fn default_gust_period() -> f64 {
        1.0
    }

    pub fn is_active(&self) -> bool {
        self.max_accel > 0.0 || self.bias != [0.0, 0.0]
    }

    /// Largest acceleration the model can produce.
    pub fn bound(&self) -> f64 {
        self.max_accel + (self.bias[0].powi(2) + self.bias[1].powi(2)).sqrt()
    }
}

/// Piecewise-constant gust process drawn from its own stream.
pub struct Wind {
    model: DisturbanceModel,
    rng: SimRng,
    current: [f64; 2],
    next_change: f64,
}

impl Wind {
    pub fn new(model: DisturbanceModel, rng: SimRng) -> Wind {
        Wind { model, rng, current: [0.0; 2], next_change: 0.0 }
    }

    /// Acceleration at simulated time `t` (seconds); call with non-decreasing `t`.
    pub fn sample(&mut self, t: f64) -> [f64; 2] {
        if !self.model.is_active() {
            return [0.0; 2];
        }
        if t >= self.next_change {
            // uniform in the disc of radius max_accel
            let r = self.model.max_accel * self.rng.random::<f64>().sqrt();
            let a = self.rng.random::<f64>() * std::f64::consts::TAU;
            self.current = [r * a.cos(), r * a.sin()];
            self.next_change = t + self.model.gust_period.max(1e-3);
        }
        [self.current[0] + self.model.bias[0], self.current[1] + self.model.bias[1]]
    }
}

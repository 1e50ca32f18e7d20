//! Scenario files (TOML, `version = 1`). See `docs/scenario.md` for the schema.
//!
//! Points may be written with two or three coordinates. A 2D point is lifted to the
//! operating altitude of the platform that uses it (0 on the ground, cruise altitude for
//! quads), so one scenario text drives either platform. A 2D unsafe box is extruded over
//! `z` in `[0, unsafe_height]`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsm::{ChannelModel, Value};
use crate::geometry::{Aabb, Position3, Region, RobotId};
use crate::lang::{AppData, Room};
use crate::planner::PlanParams;
use crate::platforms::{DisturbanceModel, PlatformKind, PlatformSpec};
use crate::tracker::TrackerGains;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: Option<f64>,
}

impl Point {
    pub const fn xy(x: f64, y: f64) -> Point {
        Point { x, y, z: None }
    }

    pub const fn xyz(x: f64, y: f64, z: f64) -> Point {
        Point { x, y, z: Some(z) }
    }

    pub fn lift(&self, altitude: f64) -> Position3 {
        Position3::new(self.x, self.y, self.z.unwrap_or(altitude))
    }
}

impl TryFrom<Vec<f64>> for Point {
    type Error = String;
    fn try_from(v: Vec<f64>) -> Result<Point, String> {
        if v.iter().any(|c| !c.is_finite()) {
            return Err("coordinates must be finite".into());
        }
        match v[..] {
            [x, y] => Ok(Point::xy(x, y)),
            [x, y, z] => Ok(Point::xyz(x, y, z)),
            _ => Err(format!("a point has 2 or 3 coordinates, got {}", v.len())),
        }
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Vec<f64> {
        match p.z {
            Some(z) => vec![p.x, p.y, z],
            None => vec![p.x, p.y],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub min: Point,
    pub max: Point,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    pub entrance: Point,
    #[serde(default)]
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppSpec {
    /// A bundled program name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// A program file, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<PathBuf>,
    /// Seconds between scheduler steps.
    #[serde(default = "AppSpec::default_period")]
    pub period: f64,
    /// Upper bound on a seeded extra delay added to each period.
    #[serde(default)]
    pub jitter: f64,
    /// Consecutive skips after which an enabled block is forced to run.
    #[serde(default = "AppSpec::default_fairness")]
    pub fairness: u32,
    #[serde(default)]
    pub params: BTreeMap<String, toml::Value>,
    #[serde(default)]
    pub waypoints: Vec<Point>,
    #[serde(default)]
    pub rooms: Vec<RoomSpec>,
}

impl AppSpec {
    fn default_period() -> f64 {
        0.1
    }
    fn default_fairness() -> u32 {
        8
    }

    pub fn named(name: &str) -> AppSpec {
        AppSpec {
            name: Some(name.into()),
            program: None,
            period: Self::default_period(),
            jitter: 0.0,
            fairness: Self::default_fairness(),
            params: BTreeMap::new(),
            waypoints: Vec::new(),
            rooms: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub id: u32,
    pub platform: PlatformKind,
    pub start: Point,
    #[serde(default)]
    pub heading: f64,
}

/// Optional replacements for a platform's defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensor_period: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integration_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensor_noise: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hover_altitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vertical_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tracker: Option<TrackerGains>,
}

impl PlatformOverrides {
    pub fn apply(&self, mut s: PlatformSpec) -> PlatformSpec {
        let q_d_changed = self.q_d.is_some();
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { s.$f = v; })* };
        }
        set!(d_t, q_d, sensor_period, integration_step, sensor_noise, mass, gain, hover_altitude, vertical_rate);
        if q_d_changed {
            s.tracker.accept_radius = 0.6 * s.q_d;
        }
        if let Some(t) = self.tracker {
            s.tracker = t;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tree_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clearance_margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_extend_dist: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goal_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goal_bias: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steer_horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub time_limit: f64,
    pub arena: BoxSpec,
    /// Height of the prism a 2D unsafe box is extruded to.
    #[serde(default = "Scenario::default_unsafe_height")]
    pub unsafe_height: f64,
    #[serde(default, rename = "unsafe")]
    pub unsafe_boxes: Vec<BoxSpec>,
    #[serde(default)]
    pub channel: ChannelModel,
    #[serde(default)]
    pub disturbance: DisturbanceModel,
    #[serde(default)]
    pub platform: BTreeMap<PlatformKind, PlatformOverrides>,
    #[serde(default)]
    pub planner: PlannerOverrides,
    pub app: AppSpec,
    pub robots: Vec<RobotSpec>,
    /// Directory that relative program paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{at}: {msg}")]
    Invalid { at: String, msg: String },
}

fn invalid(at: impl Into<String>, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { at: at.into(), msg: msg.into() }
}

fn micros(s: f64) -> u64 {
    crate::geometry::SimTime::from_secs(s).micros()
}

/// A robot with everything resolved against its platform.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRobot {
    pub id: RobotId,
    pub spec: PlatformSpec,
    pub start: Position3,
    pub heading: f64,
    pub plan: PlanParams,
    pub data: AppData,
}

impl Scenario {
    fn default_unsafe_height() -> f64 {
        5.0
    }

    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        let mut s = Scenario::from_toml(&text).map_err(|e| match e {
            ScenarioError::Parse(m) => ScenarioError::Parse(format!("{}: {m}", path.display())),
            e => e,
        })?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn spec_for(&self, kind: PlatformKind) -> PlatformSpec {
        let base = PlatformSpec::for_kind(kind);
        match self.platform.get(&kind) {
            Some(o) => o.apply(base),
            None => base,
        }
    }

    pub fn unsafe_region(&self) -> Result<Region, ScenarioError> {
        let mut boxes = Vec::new();
        for (i, b) in self.unsafe_boxes.iter().enumerate() {
            let lo = b.min.lift(0.0);
            let hi = b.max.lift(self.unsafe_height);
            let bx = Aabb::new(lo, hi).ok_or_else(|| invalid(format!("unsafe[{i}]"), "min must not exceed max"))?;
            boxes.push(bx);
        }
        Ok(Region::from_boxes(boxes))
    }

    pub fn arena_for(&self, altitude: f64) -> Result<Aabb, ScenarioError> {
        Aabb::new(self.arena.min.lift(altitude), self.arena.max.lift(altitude))
            .ok_or_else(|| invalid("arena", "min must not exceed max"))
    }

    pub fn param_values(&self) -> Result<BTreeMap<String, Value>, ScenarioError> {
        let mut out = BTreeMap::new();
        for (k, v) in &self.app.params {
            let val = match v {
                toml::Value::Integer(i) => Value::Int(*i),
                toml::Value::Float(f) => Value::Real(*f),
                toml::Value::Boolean(b) => Value::Bool(*b),
                toml::Value::Array(a) => {
                    let xs: Option<Vec<f64>> = a.iter().map(|x| x.as_float().or_else(|| x.as_integer().map(|i| i as f64))).collect();
                    match xs.as_deref() {
                        Some([x, y, z]) => Value::Pos(Position3::new(*x, *y, *z)),
                        _ => return Err(invalid(format!("app.params.{k}"), "arrays must be [x, y, z]")),
                    }
                }
                _ => return Err(invalid(format!("app.params.{k}"), "unsupported parameter type")),
            };
            out.insert(k.clone(), val);
        }
        Ok(out)
    }

    /// Program source: a bundled name or a file next to the scenario.
    pub fn program_source(&self) -> Result<String, ScenarioError> {
        match (&self.app.name, &self.app.program) {
            (Some(n), None) => crate::apps::bundled_program(n)
                .map(str::to_owned)
                .ok_or_else(|| invalid("app.name", format!("no bundled program named {n:?}"))),
            (None, Some(p)) => {
                let path = match &self.base_dir {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                std::fs::read_to_string(&path).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })
            }
            _ => Err(invalid("app", "set exactly one of `name` or `program`")),
        }
    }

    pub fn resolve_robots(&self) -> Result<Vec<ResolvedRobot>, ScenarioError> {
        let unsafe_region = self.unsafe_region()?;
        let mut out = Vec::new();
        for r in &self.robots {
            let spec = self.spec_for(r.platform);
            let alt = spec.operating_altitude();
            let q_d = spec.q_d;
            let mut plan = PlanParams::defaults(q_d, self.arena_for(alt)?);
            let o = &self.planner;
            macro_rules! set {
                ($($f:ident),*) => { $(if let Some(v) = o.$f { plan.$f = v; })* };
            }
            set!(max_tree_size, max_samples, clearance_margin, min_extend_dist, goal_radius, goal_bias, steer_horizon, latency);
            let data = AppData {
                waypoints: self.app.waypoints.iter().map(|p| p.lift(alt)).collect(),
                rooms: self
                    .app
                    .rooms
                    .iter()
                    .map(|rm| Room { entrance: rm.entrance.lift(alt), points: rm.points.iter().map(|p| p.lift(alt)).collect() })
                    .collect(),
                unsafe_region: unsafe_region.clone(),
            };
            out.push(ResolvedRobot { id: RobotId(r.id), spec, start: r.start.lift(alt), heading: r.heading, plan, data });
        }
        out.sort_by_key(|r| r.id);
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != SCENARIO_VERSION {
            return Err(invalid("version", format!("unsupported version {}, expected {SCENARIO_VERSION}", self.version)));
        }
        if !(self.time_limit.is_finite() && self.time_limit > 0.0) {
            return Err(invalid("time_limit", "must be positive"));
        }
        if !(self.unsafe_height.is_finite() && self.unsafe_height > 0.0) {
            return Err(invalid("unsafe_height", "must be positive"));
        }
        self.channel.validate().map_err(|m| invalid("channel", m))?;
        let d = &self.disturbance;
        if !(d.max_accel >= 0.0 && d.max_accel.is_finite() && d.gust_period > 0.0) {
            return Err(invalid("disturbance", "max_accel must be >= 0 and gust_period > 0"));
        }
        if self.robots.is_empty() {
            return Err(invalid("robots", "at least one robot is required"));
        }
        let mut ids: Vec<u32> = self.robots.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        if ids.iter().enumerate().any(|(i, id)| *id as usize != i) {
            return Err(invalid("robots", "ids must be exactly 0..n-1 with no repeats"));
        }
        let app = &self.app;
        if !(app.period.is_finite() && app.period > 0.0) || !(app.jitter.is_finite() && app.jitter >= 0.0) {
            return Err(invalid("app", "period must be positive and jitter non-negative"));
        }
        self.program_source()?;
        self.param_values()?;
        let unsafe_region = self.unsafe_region()?;
        for r in self.resolve_robots()? {
            let at = format!("robots[{}]", r.id);
            r.spec.validate().map_err(|m| invalid(format!("{at} ({})", r.spec.kind.name()), m))?;
            r.plan.validate(r.spec.q_d).map_err(|m| invalid("planner", m))?;
            if unsafe_region.contains(&r.start) {
                return Err(invalid(&at, "starts inside an unsafe box"));
            }
            let (h, sp, ap) = (micros(r.spec.integration_step), micros(r.spec.sensor_period), micros(app.period));
            if h == 0 || sp % h != 0 || ap % sp != 0 {
                return Err(invalid(
                    &at,
                    "integration_step must divide sensor_period, which must divide app.period (to the microsecond)",
                ));
            }
            if app.jitter > 0.0 && micros(app.jitter) < sp {
                return Err(invalid("app.jitter", "jitter below one sensor period has no effect"));
            }
            for (i, w) in r.data.waypoints.iter().enumerate() {
                if unsafe_region.contains(w) {
                    return Err(invalid(format!("app.waypoints[{i}]"), "inside an unsafe box"));
                }
            }
        }
        Ok(())
    }
}

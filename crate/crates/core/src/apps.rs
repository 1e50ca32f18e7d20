//! Bundled applications: formation, way-point race, room search, plus the way-point tour and
//! DSM soak workloads. Each is a program in the robot language and a scenario builder.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dsm::{DsmReplica, Value};
use crate::geometry::{Position3, Region, RobotId};
use crate::lang::interp::element_name;
use crate::lang::elect_from;
use crate::platforms::{DisturbanceModel, PlatformKind};
use crate::sim::scenario::{AppSpec, BoxSpec, Point, RobotSpec, RoomSpec, Scenario, SCENARIO_VERSION};
use crate::sim::{run, RunOutput, SimError};

pub const FORMATION: &str = include_str!("../programs/formation.starl");
pub const RACE: &str = include_str!("../programs/race.starl");
pub const SEARCH: &str = include_str!("../programs/search.starl");
pub const WAYPOINTS: &str = include_str!("../programs/waypoints.starl");
pub const SOAK: &str = include_str!("../programs/soak.starl");

pub fn bundled_program(name: &str) -> Option<&'static str> {
    match name {
        "formation" => Some(FORMATION),
        "race" => Some(RACE),
        "search" => Some(SEARCH),
        "waypoints" => Some(WAYPOINTS),
        "soak" => Some(SOAK),
        _ => None,
    }
}

pub const BUNDLED: [&str; 5] = ["formation", "race", "search", "waypoints", "soak"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BisectorError {
    #[error("robots {0} and {1} coincide, the opposite edge has no bisector")]
    DegenerateSegment(usize, usize),
}

/// Index of the first robot of the edge opposite robot `i` in an odd `n`-gon.
pub fn opposite(i: usize, n: usize) -> usize {
    (i + (n - 1) / 2) % n
}

/// Point at distance `len` from the midpoint of the edge opposite robot `i`, along the
/// horizontal perpendicular on robot `i`'s side. Keeps `pos[i]`'s altitude.
pub fn bisector(pos: &[Position3], i: usize, len: f64) -> Result<Position3, BisectorError> {
    let n = pos.len();
    let j = opposite(i, n);
    let k = (j + 1) % n;
    let (a, b) = (pos[j], pos[k]);
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let l = dx.hypot(dy);
    if l < 1e-12 {
        return Err(BisectorError::DegenerateSegment(j, k));
    }
    let m = a.midpoint(&b);
    let (mut ux, mut uy) = (-dy / l, dx / l);
    if (pos[i].x - m.x) * ux + (pos[i].y - m.y) * uy < 0.0 {
        ux = -ux;
        uy = -uy;
    }
    Ok(Position3::new(m.x + len * ux, m.y + len * uy, pos[i].z))
}

/// Vertices of a regular polygon. With `star`, robot `i` sits at vertex `2i mod n`, so the
/// edge opposite each robot joins its two angular neighbours' neighbours.
pub fn regular_polygon(n: usize, radius: f64, center: Position3, star: bool) -> Vec<Position3> {
    (0..n)
        .map(|i| {
            let slot = if star { (2 * i) % n } else { i };
            let a = 2.0 * PI * slot as f64 / n as f64;
            Position3::new(center.x + radius * a.cos(), center.y + radius * a.sin(), center.z)
        })
        .collect()
}

/// The `len` at which a regular polygon of circumradius `radius` is a fixed point.
pub fn equilibrium_len(n: usize, radius: f64, star: bool) -> f64 {
    let pts = regular_polygon(n, radius, Position3::ORIGIN, star);
    let j = opposite(0, n);
    let m = pts[j].midpoint(&pts[(j + 1) % n]);
    crate::geometry::dist(&pts[0], &m)
}

/// Largest relative spread `(max - min) / mean` of the distances between robots `k` places
/// apart around the centroid, over all `k`. Zero for a regular polygon.
pub fn polygon_irregularity(pos: &[Position3]) -> f64 {
    let n = pos.len();
    if n < 2 {
        return 0.0;
    }
    let cx = pos.iter().map(|p| p.x).sum::<f64>() / n as f64;
    let cy = pos.iter().map(|p| p.y).sum::<f64>() / n as f64;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ta = (pos[a].y - cy).atan2(pos[a].x - cx);
        let tb = (pos[b].y - cy).atan2(pos[b].x - cx);
        ta.total_cmp(&tb)
    });
    let mut worst = 0.0f64;
    for k in 1..=n / 2 {
        let d: Vec<f64> = (0..n)
            .map(|s| {
                let (p, q) = (pos[order[s]], pos[order[(s + k) % n]]);
                (p.x - q.x).hypot(p.y - q.y)
            })
            .collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let max = d.iter().cloned().fold(f64::MIN, f64::max);
        let min = d.iter().cloned().fold(f64::MAX, f64::min);
        if mean > 0.0 {
            worst = worst.max((max - min) / mean);
        } else {
            worst = f64::INFINITY;
        }
    }
    worst
}

/// Leader over the id slots `array[0..n]` of a replica: see [`elect_from`].
pub fn elect_leader(replica: &DsmReplica, array: &str, timed_out: bool) -> Result<Option<RobotId>, String> {
    let observed: Vec<Option<i64>> = (0..replica.participants() as usize)
        .map(|i| match replica.read(&element_name(array, i)) {
            Some(Value::Int(v)) => Some(*v),
            _ => None,
        })
        .collect();
    Ok(elect_from(&observed, timed_out)?.map(|v| RobotId(v as u32)))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct FormationConfig {
    pub n: usize,
    pub len: f64,
    /// Accepted relative spread of inter-robot distances at equilibrium.
    pub tolerance: f64,
}

impl FormationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n < 3 || self.n % 2 == 0 {
            return Err(ConfigError(format!("formation needs an odd n >= 3, got {}", self.n)));
        }
        if !(self.len > 0.0 && self.len.is_finite()) {
            return Err(ConfigError("len must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(ConfigError("tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaceConfig {
    pub waypoints: Vec<Position3>,
    pub unsafe_region: Region,
}

impl RaceConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.waypoints.is_empty() {
            return Err(ConfigError("race needs at least one way-point".into()));
        }
        if let Some(i) = self.waypoints.iter().position(|w| self.unsafe_region.contains(w)) {
            return Err(ConfigError(format!("way-point {i} is inside the unsafe region")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub rooms: Vec<crate::lang::Room>,
    pub unsafe_region: Region,
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.rooms.is_empty() {
            return Err(ConfigError("search needs at least one room".into()));
        }
        for (i, r) in self.rooms.iter().enumerate() {
            if std::iter::once(&r.entrance).chain(&r.points).any(|p| self.unsafe_region.contains(p)) {
                return Err(ConfigError(format!("room {i} has a point inside the unsafe region")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum AppError {
    #[error("scenario runs {found:?}, expected {expected}")]
    WrongApp { expected: &'static str, found: Option<String> },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn expect_app(s: &Scenario, expected: &'static str) -> Result<(), AppError> {
    if s.app.name.as_deref() != Some(expected) {
        return Err(AppError::WrongApp { expected, found: s.app.name.clone() });
    }
    Ok(())
}

fn first_robot(s: &Scenario) -> Result<crate::sim::scenario::ResolvedRobot, AppError> {
    let rs = s.resolve_robots().map_err(SimError::from)?;
    rs.into_iter().next().ok_or_else(|| AppError::Sim(SimError::from(crate::sim::scenario::ScenarioError::Invalid {
        at: "robots".into(),
        msg: "at least one robot is required".into(),
    })))
}

pub fn run_formation(s: &Scenario, seed: Option<u64>) -> Result<RunOutput, AppError> {
    expect_app(s, "formation")?;
    let len = match s.app.params.get("len") {
        Some(v) => v.as_float().or_else(|| v.as_integer().map(|i| i as f64)).unwrap_or(f64::NAN),
        None => 1.5,
    };
    FormationConfig { n: s.robots.len(), len, tolerance: 0.05 }.validate()?;
    Ok(run(s, seed)?)
}

pub fn run_race(s: &Scenario, seed: Option<u64>) -> Result<RunOutput, AppError> {
    expect_app(s, "race")?;
    let r = first_robot(s)?;
    RaceConfig { waypoints: r.data.waypoints, unsafe_region: r.data.unsafe_region }.validate()?;
    Ok(run(s, seed)?)
}

pub fn run_search(s: &Scenario, seed: Option<u64>) -> Result<RunOutput, AppError> {
    expect_app(s, "search")?;
    let r = first_robot(s)?;
    SearchConfig { rooms: r.data.rooms, unsafe_region: r.data.unsafe_region }.validate()?;
    Ok(run(s, seed)?)
}

fn scenario(time_limit: f64, arena: ([f64; 2], [f64; 2]), app: AppSpec, robots: Vec<RobotSpec>) -> Scenario {
    Scenario {
        version: SCENARIO_VERSION,
        seed: None,
        time_limit,
        arena: BoxSpec { min: Point::xy(arena.0[0], arena.0[1]), max: Point::xy(arena.1[0], arena.1[1]), tag: None },
        unsafe_height: 5.0,
        unsafe_boxes: Vec::new(),
        channel: Default::default(),
        disturbance: DisturbanceModel::default(),
        platform: Default::default(),
        planner: Default::default(),
        app,
        robots,
        base_dir: None,
    }
}

fn wall(min: [f64; 2], max: [f64; 2], tag: &str) -> BoxSpec {
    BoxSpec { min: Point::xy(min[0], min[1]), max: Point::xy(max[0], max[1]), tag: Some(tag.into()) }
}

/// Start position for one robot. Quads start on the ground so their first leg includes takeoff.
fn robot(id: u32, kind: PlatformKind, x: f64, y: f64) -> RobotSpec {
    let start = match kind {
        PlatformKind::Quad => Point::xyz(x, y, 0.0),
        PlatformKind::Diffdrive => Point::xy(x, y),
    };
    RobotSpec { id, platform: kind, start, heading: 0.0 }
}

pub const POINT_A: [f64; 2] = [3.0, 0.0];
pub const POINT_B: [f64; 2] = [3.0, 3.0];
pub const POINT_C: [f64; 2] = [6.0, 3.0];
pub const POINT_D: [f64; 2] = [6.0, 0.0];
pub const WALL: ([f64; 2], [f64; 2]) = ([4.25, -1.5], [4.75, 1.5]);

/// One robot tours A, B, C, D from the origin and returns to A through the wall between D and A.
pub fn four_waypoints(kind: PlatformKind) -> Scenario {
    let mut app = AppSpec::named("waypoints");
    app.waypoints = [POINT_A, POINT_B, POINT_C, POINT_D].iter().map(|p| Point::xy(p[0], p[1])).collect();
    let mut s = scenario(40.0, ([-1.0, -2.5], [7.5, 4.5]), app, vec![robot(0, kind, 0.0, 0.0)]);
    s.unsafe_boxes.push(wall(WALL.0, WALL.1, "wall"));
    s
}

/// A quad in gusty wind asked to hover right next to the wall.
pub fn wall_hug(target_gap: f64, max_accel: f64) -> Scenario {
    let mut s = four_waypoints(PlatformKind::Quad);
    s.app.waypoints = vec![Point::xy(WALL.0[0] - target_gap, 0.0)];
    s.disturbance = DisturbanceModel { max_accel, gust_period: 0.5, bias: [0.0, 0.0] };
    s.robots[0].start = Point::xy(0.0, 0.0);
    s.time_limit = 20.0;
    s
}

/// The target sits inside a closed ring of unsafe boxes.
pub fn enclosed_target(kind: PlatformKind) -> Scenario {
    let mut app = AppSpec::named("waypoints");
    app.waypoints = vec![Point::xy(POINT_A[0], POINT_A[1])];
    let mut s = scenario(15.0, ([-1.0, -2.5], [7.5, 4.5]), app, vec![robot(0, kind, 0.0, 0.0)]);
    let (cx, cy, r, t) = (POINT_A[0], POINT_A[1], 0.8, 0.2);
    s.unsafe_boxes = vec![
        wall([cx - r - t, cy - r - t], [cx + r + t, cy - r], "ring-south"),
        wall([cx - r - t, cy + r], [cx + r + t, cy + r + t], "ring-north"),
        wall([cx - r - t, cy - r], [cx - r, cy + r], "ring-west"),
        wall([cx + r, cy - r], [cx + r + t, cy + r], "ring-east"),
    ];
    s
}

/// `n` robots near a star-labelled regular polygon, each vertex moved by up to `perturb`
/// times the circumradius. `len` is set to the polygon's equilibrium value.
pub fn formation(n: usize, kind: PlatformKind, perturb: f64, layout_seed: u64) -> Scenario {
    let radius = 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(layout_seed);
    let verts = regular_polygon(n, radius, Position3::ORIGIN, true);
    let robots = verts
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let a = rng.random_range(0.0..2.0 * PI);
            let d = rng.random_range(0.0..=perturb * radius);
            let mut r = robot(i as u32, kind, v.x + d * a.cos(), v.y + d * a.sin());
            r.start = Point::xy(r.start.x, r.start.y);
            r
        })
        .collect();
    let mut app = AppSpec::named("formation");
    app.params.insert("len".into(), toml::Value::Float(equilibrium_len(n, radius, true)));
    scenario(40.0, ([-4.0, -4.0], [4.0, 4.0]), app, robots)
}

/// Two robots racing over a loop of `k` way-points.
pub fn race(kind: PlatformKind, k: usize) -> Scenario {
    let mut app = AppSpec::named("race");
    app.waypoints = (0..k)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / k as f64;
            Point::xy(3.0 + 2.0 * a.cos(), 2.0 * a.sin())
        })
        .collect();
    let robots = vec![robot(0, kind, 0.0, -0.5), robot(1, kind, 0.0, 0.5)];
    let mut s = scenario(60.0, ([-1.5, -3.0], [6.0, 3.0]), app, robots);
    s.unsafe_boxes.push(wall([2.7, -0.3], [3.3, 0.3], "pillar"));
    s
}

/// Three robots searching three rooms off a corridor.
pub fn search(kind: PlatformKind) -> Scenario {
    let mut app = AppSpec::named("search");
    app.rooms = (0..3)
        .map(|r| {
            let x = 1.5 + 2.5 * r as f64;
            RoomSpec {
                entrance: Point::xy(x, 1.0),
                points: vec![Point::xy(x - 0.5, 2.5), Point::xy(x + 0.5, 2.5)],
            }
        })
        .collect();
    let robots = (0..3).map(|i| robot(i, kind, 0.5 * i as f64, -0.5)).collect();
    let mut s = scenario(60.0, ([-1.0, -1.5], [8.0, 3.5]), app, robots);
    for r in 0..4 {
        let x = 0.25 + 2.5 * r as f64;
        s.unsafe_boxes.push(wall([x - 0.15, 1.6], [x + 0.15, 3.5], "partition"));
    }
    s
}

/// Stationary ground robots exercising the shared memory over a lossy channel.
pub fn dsm_soak(n: u32, loss_prob: f64) -> Scenario {
    let robots = (0..n).map(|i| robot(i, PlatformKind::Diffdrive, i as f64, 0.0)).collect();
    let mut s = scenario(30.0, ([-1.0, -1.0], [n as f64, 1.0]), AppSpec::named("soak"), robots);
    s.channel.loss_prob = loss_prob;
    s
}

/// Bundled demo scenario by application name.
pub fn demo(name: &str, kind: PlatformKind) -> Option<Scenario> {
    match name {
        "formation" => Some(formation(5, kind, 0.1, 1)),
        "race" => Some(race(kind, 6)),
        "search" => Some(search(kind)),
        "waypoints" => Some(four_waypoints(kind)),
        _ => None,
    }
}

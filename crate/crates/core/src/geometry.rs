//! Points, boxes, regions, robot identities and simulated time.
//!
//! All robots share one fixed global frame. Ground platforms keep `z = 0`.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

/// A point in the shared 3D frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Position3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3 {
    pub const ORIGIN: Position3 = Position3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Position3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, o: &Position3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn midpoint(&self, o: &Position3) -> Position3 {
        Position3::new((self.x + o.x) / 2.0, (self.y + o.y) / 2.0, (self.z + o.z) / 2.0)
    }

    pub fn with_z(self, z: f64) -> Position3 {
        Position3 { z, ..self }
    }
}

impl From<[f64; 3]> for Position3 {
    fn from(a: [f64; 3]) -> Self {
        Position3::new(a[0], a[1], a[2])
    }
}

impl From<Position3> for [f64; 3] {
    fn from(p: Position3) -> Self {
        [p.x, p.y, p.z]
    }
}

impl Add for Position3 {
    type Output = Position3;
    fn add(self, o: Position3) -> Position3 {
        Position3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Position3 {
    type Output = Position3;
    fn sub(self, o: Position3) -> Position3 {
        Position3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Position3 {
    type Output = Position3;
    fn mul(self, k: f64) -> Position3 {
        Position3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl fmt::Display for Position3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Euclidean distance.
pub fn dist(a: &Position3, b: &Position3) -> f64 {
    (*a - *b).norm()
}

/// Closed axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Position3,
    pub max: Position3,
}

impl Aabb {
    /// Returns `None` unless `min <= max` componentwise and both corners are finite.
    pub fn new(min: Position3, max: Position3) -> Option<Aabb> {
        let ok = min.is_finite()
            && max.is_finite()
            && min.x <= max.x
            && min.y <= max.y
            && min.z <= max.z;
        ok.then_some(Aabb { min, max })
    }

    pub fn contains(&self, p: &Position3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn center(&self) -> Position3 {
        self.min.midpoint(&self.max)
    }

    /// Distance from `p` to the closest point of the box; zero inside.
    pub fn distance_to(&self, p: &Position3) -> f64 {
        let gap = |v: f64, lo: f64, hi: f64| {
            if v < lo {
                lo - v
            } else if v > hi {
                v - hi
            } else {
                0.0
            }
        };
        let dx = gap(p.x, self.min.x, self.max.x);
        let dy = gap(p.y, self.min.y, self.max.y);
        let dz = gap(p.z, self.min.z, self.max.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Distance to a region: finite, or the `Infinite` sentinel for the empty region.
///
/// The derived ordering places every finite value below `Infinite`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum Clearance {
    Finite(f64),
    Infinite,
}

impl Clearance {
    pub fn is_within(&self, radius: f64) -> bool {
        matches!(self, Clearance::Finite(d) if *d <= radius)
    }

    pub fn at_least(&self, margin: f64) -> bool {
        match self {
            Clearance::Finite(d) => *d >= margin,
            Clearance::Infinite => true,
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Clearance::Finite(d) => Some(*d),
            Clearance::Infinite => None,
        }
    }
}

/// A union of closed boxes. The empty list is the empty region.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Region {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    pub boxes: Vec<Aabb>,
}

impl Region {
    pub fn empty() -> Region {
        Region::default()
    }

    pub fn from_boxes(boxes: Vec<Aabb>) -> Region {
        Region { tag: None, boxes }
    }

    pub fn tagged(mut self, tag: impl Into<String>) -> Region {
        self.tag = Some(tag.into());
        self
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn contains(&self, p: &Position3) -> bool {
        self.boxes.iter().any(|b| b.contains(p))
    }

    pub fn union(&self, other: &Region) -> Region {
        let mut boxes = self.boxes.clone();
        boxes.extend(other.boxes.iter().copied());
        Region { tag: self.tag.clone(), boxes }
    }
}

/// Minimum Euclidean distance from `p` to any box of `r`.
pub fn dist_to_region(p: &Position3, r: &Region) -> Clearance {
    r.boxes
        .iter()
        .map(|b| b.distance_to(p))
        .min_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal))
        .map_or(Clearance::Infinite, Clearance::Finite)
}

/// Participant identity; the `n` participants of a run are exactly `0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RobotId(pub u32);

impl RobotId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for RobotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Simulated time, held as whole microseconds so schedules never drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MICROS_PER_SEC: u64 = 1_000_000;

    pub const fn from_micros(us: u64) -> SimTime {
        SimTime(us)
    }

    /// Rounds to the nearest microsecond; negative or non-finite input clamps to zero.
    pub fn from_secs(s: f64) -> SimTime {
        if s.is_finite() && s > 0.0 {
            SimTime((s * Self::MICROS_PER_SEC as f64).round() as u64)
        } else {
            SimTime(0)
        }
    }

    pub const fn micros(self) -> u64 {
        self.0
    }

    pub fn secs(self) -> f64 {
        self.0 as f64 / Self::MICROS_PER_SEC as f64
    }

    pub fn saturating_sub(self, o: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(o.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, o: SimTime) -> SimTime {
        SimTime(self.0 + o.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.secs())
    }
}

impl Serialize for SimTime {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.secs())
    }
}

impl<'de> Deserialize<'de> for SimTime {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<SimTime, D::Error> {
        let s = f64::deserialize(d)?;
        if !s.is_finite() || s < 0.0 {
            return Err(serde::de::Error::custom("time must be finite and non-negative"));
        }
        Ok(SimTime::from_secs(s))
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

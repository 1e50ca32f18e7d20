//! Replicated shared variables over a lossy, delaying message channel.
//!
//! Every robot owns a [`DsmReplica`]. A local write updates the local copy at once and produces
//! one [`Envelope`] per other participant. Receivers apply an update only if its timestamp is
//! strictly newer than the stored one (last-writer-wins on `(time, robot)`), so delivery is
//! idempotent and order-insensitive. Owners periodically re-emit their latest values so that
//! replicas converge even when messages are dropped.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Position3, Region, RobotId, SimTime};
use crate::rng::SimRng;

/// Values held by program variables and shared variables.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    #[default]
    Null,
    Int(i64),
    Real(f64),
    Bool(bool),
    Pos(Position3),
    Region(Region),
    List(Vec<Value>),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Int(_) => "int",
            Value::Real(_) => "real",
            Value::Bool(_) => "bool",
            Value::Pos(_) => "pos",
            Value::Region(_) => "region",
            Value::List(_) => "list",
        }
    }
}

/// Who may write a shared variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Writer {
    Robot(RobotId),
    Multi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharedVarDecl {
    pub name: String,
    pub writer: Writer,
    pub initial: Value,
}

/// Totally ordered by time, then robot id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp {
    pub time: SimTime,
    pub robot: RobotId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsmUpdate {
    pub name: String,
    pub value: Value,
    pub timestamp: Timestamp,
    pub origin: RobotId,
}

/// An update addressed to one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub to: RobotId,
    pub update: DsmUpdate,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DsmError {
    #[error("robot {by} may not write single-writer variable `{name}` (owned by robot {owner})")]
    WriteByNonWriter { name: String, owner: RobotId, by: RobotId },
    #[error("unknown shared variable `{0}`")]
    UnknownVariable(String),
}

#[derive(Debug, Clone)]
struct Slot {
    writer: Writer,
    value: Value,
    stamp: Option<Timestamp>,
}

#[derive(Debug, Clone)]
pub struct DsmReplica {
    owner: RobotId,
    participants: u32,
    vars: BTreeMap<String, Slot>,
    rebroadcast_period: SimTime,
    next_rebroadcast: SimTime,
}

impl DsmReplica {
    pub fn new(owner: RobotId, participants: u32, rebroadcast_period: SimTime) -> DsmReplica {
        DsmReplica {
            owner,
            participants,
            vars: BTreeMap::new(),
            rebroadcast_period,
            next_rebroadcast: rebroadcast_period,
        }
    }

    pub fn owner(&self) -> RobotId {
        self.owner
    }

    pub fn participants(&self) -> u32 {
        self.participants
    }

    /// Declaring an existing name again keeps the current contents.
    pub fn declare(&mut self, decl: SharedVarDecl) {
        self.vars.entry(decl.name).or_insert(Slot {
            writer: decl.writer,
            value: decl.initial,
            stamp: None,
        });
    }

    pub fn is_declared(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn writer_of(&self, name: &str) -> Option<Writer> {
        self.vars.get(name).map(|s| s.writer)
    }

    pub fn read(&self, name: &str) -> Option<&Value> {
        self.vars.get(name).map(|s| &s.value)
    }

    pub fn stamp(&self, name: &str) -> Option<Timestamp> {
        self.vars.get(name).and_then(|s| s.stamp)
    }

    /// `(name, value, stamp)` for every variable, in name order.
    pub fn snapshot(&self) -> Vec<(String, Value, Option<Timestamp>)> {
        self.vars
            .iter()
            .map(|(k, s)| (k.clone(), s.value.clone(), s.stamp))
            .collect()
    }

    /// Writes locally and returns the updates to send to every other participant.
    ///
    /// Rewriting the current value after it has been stamped is a no-op. When `(now, owner)`
    /// does not exceed the stored stamp the new stamp is bumped one microsecond past it, so a
    /// write that follows an observed one always wins.
    pub fn write(&mut self, name: &str, v: Value, now: SimTime) -> Result<Vec<Envelope>, DsmError> {
        let owner = self.owner;
        let participants = self.participants;
        let slot = self
            .vars
            .get_mut(name)
            .ok_or_else(|| DsmError::UnknownVariable(name.to_string()))?;
        if let Writer::Robot(w) = slot.writer {
            if w != owner {
                return Err(DsmError::WriteByNonWriter { name: name.to_string(), owner: w, by: owner });
            }
        }
        if slot.stamp.is_some() && slot.value == v {
            return Ok(Vec::new());
        }
        let mut stamp = Timestamp { time: now, robot: owner };
        if let Some(prev) = slot.stamp {
            if stamp <= prev {
                stamp.time = SimTime::from_micros(prev.time.micros() + 1);
            }
        }
        slot.value = v.clone();
        slot.stamp = Some(stamp);
        let update = DsmUpdate { name: name.to_string(), value: v, timestamp: stamp, origin: owner };
        Ok(fan_out(owner, participants, &update))
    }

    /// Applies `u` if it is strictly newer than the stored copy. Returns whether state changed.
    pub fn deliver(&mut self, u: &DsmUpdate) -> Result<bool, DsmError> {
        let slot = self
            .vars
            .get_mut(&u.name)
            .ok_or_else(|| DsmError::UnknownVariable(u.name.clone()))?;
        if let Writer::Robot(w) = slot.writer {
            if w != u.origin {
                return Err(DsmError::WriteByNonWriter { name: u.name.clone(), owner: w, by: u.origin });
            }
        }
        if slot.stamp.is_some_and(|s| s >= u.timestamp) {
            return Ok(false);
        }
        slot.value = u.value.clone();
        slot.stamp = Some(u.timestamp);
        Ok(true)
    }

    /// Re-emits, once per rebroadcast period, every stamped variable this replica is the
    /// authority for: single-writer variables it owns and multi-writer variables whose
    /// winning write it made. A zero period disables rebroadcast.
    pub fn tick_rebroadcast(&mut self, now: SimTime) -> Vec<Envelope> {
        if self.rebroadcast_period == SimTime::ZERO || now < self.next_rebroadcast {
            return Vec::new();
        }
        self.next_rebroadcast = now + self.rebroadcast_period;
        let owner = self.owner;
        let mut out = Vec::new();
        for (name, slot) in &self.vars {
            let Some(stamp) = slot.stamp else { continue };
            let mine = match slot.writer {
                Writer::Robot(w) => w == owner,
                Writer::Multi => stamp.robot == owner,
            };
            if mine {
                let u = DsmUpdate { name: name.clone(), value: slot.value.clone(), timestamp: stamp, origin: owner };
                out.extend(fan_out(owner, self.participants, &u));
            }
        }
        out
    }
}

fn fan_out(owner: RobotId, participants: u32, u: &DsmUpdate) -> Vec<Envelope> {
    (0..participants)
        .map(RobotId)
        .filter(|r| *r != owner)
        .map(|to| Envelope { to, update: u.clone() })
        .collect()
}

/// Delay and loss parameters for the simulated broadcast medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    #[serde(default = "ChannelModel::default_min_delay")]
    pub min_delay: f64,
    #[serde(default = "ChannelModel::default_max_delay")]
    pub max_delay: f64,
    #[serde(default)]
    pub loss_prob: f64,
    #[serde(default = "ChannelModel::default_rebroadcast")]
    pub rebroadcast_period: f64,
}

impl ChannelModel {
    fn default_min_delay() -> f64 {
        0.01
    }
    fn default_max_delay() -> f64 {
        0.05
    }
    fn default_rebroadcast() -> f64 {
        0.5
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.min_delay >= 0.0 && self.min_delay <= self.max_delay && self.max_delay.is_finite()) {
            return Err("need 0 <= min_delay <= max_delay".into());
        }
        if !(0.0..1.0).contains(&self.loss_prob) {
            return Err("loss_prob must lie in [0, 1)".into());
        }
        if !(self.rebroadcast_period >= 0.0 && self.rebroadcast_period.is_finite()) {
            return Err("rebroadcast_period must be >= 0".into());
        }
        Ok(())
    }
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            min_delay: Self::default_min_delay(),
            max_delay: Self::default_max_delay(),
            loss_prob: 0.0,
            rebroadcast_period: Self::default_rebroadcast(),
        }
    }
}

/// In-flight messages ordered by delivery time, then send order.
pub struct Channel {
    model: ChannelModel,
    rng: SimRng,
    seq: u64,
    in_flight: BTreeMap<(SimTime, u64), Envelope>,
}

impl Channel {
    pub fn new(model: ChannelModel, rng: SimRng) -> Channel {
        Channel { model, rng, seq: 0, in_flight: BTreeMap::new() }
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    /// Returns the scheduled delivery time, or `None` if the message is dropped.
    pub fn send(&mut self, env: Envelope, now: SimTime) -> Option<SimTime> {
        if self.rng.random::<f64>() < self.model.loss_prob {
            return None;
        }
        let span = self.model.max_delay - self.model.min_delay;
        let delay = self.model.min_delay + span * self.rng.random::<f64>();
        let at = now + SimTime::from_secs(delay);
        self.seq += 1;
        self.in_flight.insert((at, self.seq), env);
        Some(at)
    }

    /// Removes and returns every message due at or before `now`.
    pub fn due(&mut self, now: SimTime) -> Vec<Envelope> {
        let mut out = Vec::new();
        while let Some(entry) = self.in_flight.first_entry() {
            if entry.key().0 > now {
                break;
            }
            out.push(entry.remove());
        }
        out
    }

    pub fn pending(&self) -> usize {
        self.in_flight.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, Stream};
    use proptest::prelude::*;

    fn t(s: f64) -> SimTime {
        SimTime::from_secs(s)
    }

    fn replicas(n: u32, period: f64) -> Vec<DsmReplica> {
        (0..n)
            .map(|i| {
                let mut r = DsmReplica::new(RobotId(i), n, t(period));
                r.declare(SharedVarDecl { name: "x".into(), writer: Writer::Robot(RobotId(0)), initial: Value::Int(0) });
                r.declare(SharedVarDecl { name: "m".into(), writer: Writer::Multi, initial: Value::Int(0) });
                r
            })
            .collect()
    }

    #[test]
    fn local_write_is_visible_immediately() {
        let mut rs = replicas(4, 0.5);
        let out = rs[0].write("x", Value::Int(5), t(1.0)).unwrap();
        assert_eq!(rs[0].read("x"), Some(&Value::Int(5)));
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|e| e.to != RobotId(0)));
    }

    #[test]
    fn non_writer_is_rejected() {
        let mut rs = replicas(2, 0.5);
        let err = rs[1].write("x", Value::Int(1), t(1.0)).unwrap_err();
        assert!(matches!(err, DsmError::WriteByNonWriter { .. }));
        assert_eq!(rs[1].read("x"), Some(&Value::Int(0)));
    }

    #[test]
    fn stale_update_is_ignored() {
        let mut rs = replicas(2, 0.5);
        let old = rs[0].write("x", Value::Int(1), t(1.0)).unwrap().remove(0).update;
        let new = rs[0].write("x", Value::Int(2), t(2.0)).unwrap().remove(0).update;
        assert!(rs[1].deliver(&new).unwrap());
        assert!(!rs[1].deliver(&old).unwrap());
        assert_eq!(rs[1].read("x"), Some(&Value::Int(2)));
        assert!(rs[1].deliver(&DsmUpdate { name: "nope".into(), ..new }).is_err());
    }

    #[test]
    fn equal_time_multi_writes_resolve_to_higher_id_in_both_orders() {
        // Enumerate both delivery orders at a third replica and at each writer.
        for order in [[1usize, 2], [2, 1]] {
            let mut rs = replicas(3, 0.5);
            let u1 = rs[1].write("m", Value::Int(10), t(1.0)).unwrap();
            let u2 = rs[2].write("m", Value::Int(20), t(1.0)).unwrap();
            let to = |us: &Vec<Envelope>, r: u32| us.iter().find(|e| e.to == RobotId(r)).unwrap().update.clone();
            for &w in &order {
                let u = if w == 1 { to(&u1, 0) } else { to(&u2, 0) };
                rs[0].deliver(&u).unwrap();
            }
            rs[1].deliver(&to(&u2, 1)).unwrap();
            rs[2].deliver(&to(&u1, 2)).unwrap();
            for r in &rs {
                assert_eq!(r.read("m"), Some(&Value::Int(20)));
            }
        }
    }

    #[test]
    fn rebroadcast_respects_period() {
        let mut rs = replicas(3, 0.5);
        rs[0].write("x", Value::Int(3), t(0.2)).unwrap();
        assert_eq!(rs[0].tick_rebroadcast(t(1.0)).len(), 2);
        assert!(rs[0].tick_rebroadcast(t(1.2)).is_empty());
        assert_eq!(rs[0].tick_rebroadcast(t(1.5)).len(), 2);
        // nothing owned and nothing written
        assert!(rs[1].tick_rebroadcast(t(1.0)).is_empty());
    }

    #[test]
    fn write_after_observed_stamp_is_bumped() {
        let mut rs = replicas(3, 0.5);
        let u2 = rs[2].write("m", Value::Int(7), t(1.0)).unwrap();
        rs[1].deliver(&u2[1].update).unwrap();
        let u1 = rs[1].write("m", Value::Int(8), t(1.0)).unwrap();
        assert!(u1[0].update.timestamp > u2[0].update.timestamp);
        assert!(rs[2].deliver(&u1[1].update).unwrap());
    }

    #[test]
    fn lossy_channel_with_rebroadcast_converges() {
        let model = ChannelModel { min_delay: 0.01, max_delay: 0.05, loss_prob: 0.5, rebroadcast_period: 0.5 };
        let mut ch = Channel::new(model, derive_stream(3, Stream::Channel, None));
        let mut rs = replicas(4, 0.5);
        for (i, v) in [(0u32, 1i64), (1, 2), (2, 3)] {
            let now = t(0.1 * f64::from(i + 1));
            let name = if i == 0 { "x" } else { "m" };
            for e in rs[i as usize].write(name, Value::Int(v), now).unwrap() {
                ch.send(e, now);
            }
        }
        let mut tick = 0u64;
        while tick < 200_000 {
            let now = SimTime::from_micros(tick * 10_000);
            for e in ch.due(now) {
                rs[e.to.index()].deliver(&e.update).unwrap();
            }
            for r in rs.iter_mut() {
                for e in r.tick_rebroadcast(now) {
                    ch.send(e, now);
                }
            }
            tick += 1;
            let first = rs[0].snapshot();
            if now > t(1.0) && rs.iter().all(|r| r.snapshot() == first) {
                break;
            }
        }
        let first = rs[0].snapshot();
        assert!(rs.iter().all(|r| r.snapshot() == first), "replicas did not converge");
        assert_eq!(rs[3].read("m"), Some(&Value::Int(3)));
    }

    proptest! {
        // Any delivery order of any subset-with-duplicates yields the same state as in-order.
        #[test]
        fn delivery_order_does_not_matter(perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle(),
                                          dup in 0..6usize) {
            let mut rs = replicas(3, 0.5);
            let mut ups = Vec::new();
            for k in 0..6u32 {
                let w = (k % 2 + 1) as usize;
                let now = t(0.5 * f64::from(k / 2));
                ups.push(rs[w].write("m", Value::Int(i64::from(k)), now).unwrap()
                    .into_iter().find(|e| e.to == RobotId(0)).unwrap().update);
            }
            let mut a = replicas(3, 0.5).remove(0);
            let mut b = replicas(3, 0.5).remove(0);
            for u in &ups { a.deliver(u).unwrap(); }
            let mut last = None;
            for &i in &perm {
                let before = b.stamp("m");
                b.deliver(&ups[i]).unwrap();
                prop_assert!(b.stamp("m") >= before);
                last = b.stamp("m");
            }
            b.deliver(&ups[dup]).unwrap();
            prop_assert_eq!(a.snapshot(), b.snapshot());
            prop_assert_eq!(last, b.stamp("m"));
        }
    }
}

use std::sync::Arc;

use rand::Rng;

use super::scenario::{ResolvedRobot, Scenario};
use super::{Fault, SimError};
use crate::dsm::{Channel, DsmReplica, Envelope, Value};
use crate::geometry::{Position3, Region, RobotId, SimTime};
use crate::lang::{parse_program, AppData, AppInstance, Host, Layout};
use crate::planner::PlanOutcome;
use crate::platforms::{Command, PlatformKind, PlatformState, Wind};
use crate::reach_avoid::{Controller, ControllerEvent};
use crate::rng::{derive_stream, SimRng, Stream};
use crate::trace::{EventKind, Flag, RobotMeta, Trace, TraceEvent, TraceHeader, WriterKind};

pub struct RunOutput {
    pub trace: Trace,
    /// Final shared memory of each robot, indexed by id.
    pub replicas: Vec<DsmReplica>,
    pub faults: Vec<Fault>,
    /// Final simulated position of each robot.
    pub final_positions: Vec<Position3>,
}

struct Bot {
    id: RobotId,
    res: ResolvedRobot,
    state: PlatformState,
    ctrl: Controller,
    app: AppInstance,
    replica: DsmReplica,
    wind: Option<Wind>,
    tiebreak: SimRng,
    cmd: Command,
    next_app: SimTime,
    sensor_us: u64,
    step_us: u64,
    fault_reported: bool,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

struct Log {
    events: Vec<TraceEvent>,
    faults: Vec<Fault>,
}

impl Log {
    fn push(&mut self, t: SimTime, robot: RobotId, kind: EventKind) {
        self.events.push(TraceEvent { t, robot: Some(robot), kind });
    }

    fn fault(&mut self, t: SimTime, robot: RobotId, message: String) {
        self.faults.push(Fault { t, robot: Some(robot), message: message.clone() });
        self.push(t, robot, EventKind::Fault { message });
    }

    fn controller(&mut self, t: SimTime, robot: RobotId, epoch: u64, evs: Vec<ControllerEvent>) {
        for e in evs {
            let kind = match e {
                ControllerEvent::Flag { flag, value } => EventKind::FlagChange { epoch, flag, value, writer: WriterKind::Controller },
                ControllerEvent::Predicate { predicate, value } => EventKind::Predicate { epoch, predicate, value },
                ControllerEvent::Plan { outcome, tree_size, samples, requested_at } => {
                    let (found, waypoints) = match outcome {
                        PlanOutcome::PathFound(w) => (true, w),
                        PlanOutcome::NoPathFound => (false, Vec::new()),
                    };
                    EventKind::PlanResult { epoch, found, waypoints, tree_size, samples, requested_at }
                }
            };
            self.push(t, robot, kind);
        }
    }
}

fn send_all(channel: &mut Channel, envs: Vec<Envelope>, now: SimTime) {
    for e in envs {
        channel.send(e, now);
    }
}

/// The program's window onto one robot during a scheduler step.
struct BotHost<'a> {
    id: RobotId,
    n: u32,
    now: SimTime,
    ctrl: &'a mut Controller,
    replica: &'a mut DsmReplica,
    channel: &'a mut Channel,
    log: &'a mut Log,
    data: &'a AppData,
}

impl Host for BotHost<'_> {
    fn robot(&self) -> Option<RobotId> {
        Some(self.id)
    }
    fn num_bots(&self) -> u32 {
        self.n
    }
    fn now(&self) -> SimTime {
        self.now
    }
    fn current_pos(&self) -> Option<Position3> {
        Some(self.ctrl.vars().current)
    }
    fn flag(&self, f: Flag) -> Option<bool> {
        Some(self.ctrl.vars().flag(f))
    }
    fn read_shared(&self, name: &str) -> Option<Value> {
        self.replica.read(name).cloned()
    }
    fn write_shared(&mut self, name: &str, v: Value) -> Result<(), String> {
        let before = self.replica.stamp(name);
        let envs = self.replica.write(name, v.clone(), self.now).map_err(|e| e.to_string())?;
        let after = self.replica.stamp(name);
        if let Some(stamp) = after.filter(|s| Some(*s) != before) {
            self.log.push(self.now, self.id, EventKind::DsmWrite { name: name.to_string(), value: v, stamp });
        }
        send_all(self.channel, envs, self.now);
        Ok(())
    }
    fn reach_avoid(&mut self, x: Position3, u: Region) -> Result<(), String> {
        if !x.is_finite() {
            return Err(format!("doReachAvoid target is not finite: {x:?}"));
        }
        let evs = self.ctrl.do_reach_avoid(x, u.clone());
        let epoch = self.ctrl.vars().epoch;
        self.log.push(self.now, self.id, EventKind::ReachavoidCall { epoch, target: x, unsafe_region: u, writer: WriterKind::App });
        self.log.controller(self.now, self.id, epoch, evs);
        Ok(())
    }
    fn data(&self) -> &AppData {
        self.data
    }
}

fn us(s: f64) -> u64 {
    SimTime::from_secs(s).micros()
}

/// Runs `s` to its time limit. `seed` overrides the scenario's seed.
pub fn run(s: &Scenario, seed: Option<u64>) -> Result<RunOutput, SimError> {
    let seed = seed.or(s.seed).ok_or(SimError::MissingSeed)?;
    s.validate()?;
    let program = Arc::new(parse_program(&s.program_source()?)?);
    let robots = s.resolve_robots()?;
    let n = robots.len() as u32;
    let layout = Arc::new(Layout::new(&program, &s.param_values()?, &robots[0].data, n).map_err(SimError::Layout)?);
    let decls = layout.shared_var_decls();
    let rebroadcast = SimTime::from_secs(s.channel.rebroadcast_period);

    let mut bots: Vec<Bot> = robots
        .into_iter()
        .map(|res| {
            let id = res.id;
            let mut replica = DsmReplica::new(id, n, rebroadcast);
            for d in &decls {
                replica.declare(d.clone());
            }
            let state = PlatformState::initial(res.spec.kind, res.start, res.heading);
            let ctrl = Controller::new(
                res.spec.clone(),
                res.plan.clone(),
                state.position(),
                derive_stream(seed, Stream::Planner, Some(id)),
                derive_stream(seed, Stream::SensorNoise, Some(id)),
            );
            let wind = (res.spec.kind == PlatformKind::Quad && s.disturbance.is_active())
                .then(|| Wind::new(s.disturbance, derive_stream(seed, Stream::Disturbance, Some(id))));
            Bot {
                id,
                sensor_us: us(res.spec.sensor_period),
                step_us: us(res.spec.integration_step),
                state,
                ctrl,
                app: AppInstance::new(Arc::clone(&program), Arc::clone(&layout), s.app.fairness),
                replica,
                wind,
                tiebreak: derive_stream(seed, Stream::AppTiebreak, Some(id)),
                cmd: Command::Hover,
                next_app: SimTime::ZERO,
                fault_reported: false,
                res,
            }
        })
        .collect();

    let meta = bots
        .iter()
        .map(|b| RobotMeta {
            id: b.id,
            platform: b.res.spec.kind,
            d_t: b.res.spec.d_t,
            q_d: b.res.spec.q_d,
            sensor_period: b.res.spec.sensor_period,
        })
        .collect();
    let mut channel = Channel::new(s.channel, derive_stream(seed, Stream::Channel, None));
    let mut log = Log { events: Vec::new(), faults: Vec::new() };
    let base = bots.iter().map(|b| b.step_us).fold(0, gcd).max(1);
    let end = us(s.time_limit);
    let period = us(s.app.period);
    let jitter = us(s.app.jitter);

    let mut tick: u64 = 0;
    loop {
        let t_us = tick * base;
        if t_us >= end {
            break;
        }
        let now = SimTime::from_micros(t_us);

        for env in channel.due(now) {
            let b = &mut bots[env.to.index()];
            match b.replica.deliver(&env.update) {
                Ok(true) => {
                    let u = env.update;
                    log.push(now, b.id, EventKind::DsmDeliver { name: u.name, value: u.value, stamp: u.timestamp, from: u.origin });
                }
                Ok(false) => {}
                Err(e) => log.fault(now, b.id, e.to_string()),
            }
        }

        for b in bots.iter_mut() {
            if t_us % b.sensor_us != 0 {
                continue;
            }
            let truth = b.state.position();
            b.ctrl.sensor_update(truth);
            log.push(now, b.id, EventKind::Pose { pos: b.ctrl.vars().current, truth });

            let (cmd, evs) = b.ctrl.tick(&b.state, now);
            b.cmd = cmd;
            log.controller(now, b.id, b.ctrl.vars().epoch, evs);

            send_all(&mut channel, b.replica.tick_rebroadcast(now), now);

            if now >= b.next_app && b.app.halted().is_none() {
                let mut host = BotHost {
                    id: b.id,
                    n,
                    now,
                    ctrl: &mut b.ctrl,
                    replica: &mut b.replica,
                    channel: &mut channel,
                    log: &mut log,
                    data: &b.res.data,
                };
                let r = b.app.step(&mut host, &mut b.tiebreak);
                match r {
                    Ok(Some(i)) => {
                        let block = b.app.program().blocks[i].name.clone();
                        log.push(now, b.id, EventKind::AppBlock { block });
                    }
                    Ok(None) => {}
                    Err(f) => log.fault(now, b.id, f.to_string()),
                }
                let extra = if jitter > 0 { b.tiebreak.random_range(0..=jitter) } else { 0 };
                b.next_app = SimTime::from_micros(t_us + period + extra);
            }
        }

        for b in bots.iter_mut() {
            if t_us % b.step_us != 0 {
                continue;
            }
            let h = b.res.spec.integration_step;
            let dist = b.wind.as_mut().map_or([0.0; 2], |w| w.sample(now.secs()));
            match b.state.step(&b.cmd, h, &b.res.spec, dist) {
                Ok(next) => b.state = next,
                Err(e) if !b.fault_reported => {
                    b.fault_reported = true;
                    log.fault(now, b.id, format!("platform: {e}"));
                }
                Err(_) => {}
            }
        }
        tick += 1;
    }

    let final_positions = bots.iter().map(|b| b.state.position()).collect();
    Ok(RunOutput {
        trace: Trace { header: Some(TraceHeader::new(seed, s.time_limit, meta)), events: log.events },
        replicas: bots.into_iter().map(|b| b.replica).collect(),
        faults: log.faults,
        final_positions,
    })
}

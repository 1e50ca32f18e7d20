use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::*;
use crate::dsm::{SharedVarDecl, Value, Writer};
use crate::geometry::{dist, Position3, Region, RobotId, SimTime};
use crate::rng::SimRng;
use crate::trace::Flag;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Room {
    pub entrance: Position3,
    #[serde(default)]
    pub points: Vec<Position3>,
}

/// Scenario data a program can query through built-ins.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AppData {
    pub waypoints: Vec<Position3>,
    pub rooms: Vec<Room>,
    pub unsafe_region: Region,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}{message}", block.as_ref().map(|b| format!("in block {b}: ")).unwrap_or_default())]
pub struct RuntimeFault {
    pub block: Option<String>,
    pub message: String,
}

impl RuntimeFault {
    fn new(message: impl Into<String>) -> RuntimeFault {
        RuntimeFault { block: None, message: message.into() }
    }
}

type R<T> = Result<T, RuntimeFault>;

/// What a running program can see of its robot and the world.
pub trait Host {
    fn robot(&self) -> Option<RobotId>;
    fn num_bots(&self) -> u32;
    fn now(&self) -> SimTime;
    fn current_pos(&self) -> Option<Position3>;
    fn flag(&self, f: Flag) -> Option<bool>;
    fn read_shared(&self, name: &str) -> Option<Value>;
    fn write_shared(&mut self, name: &str, v: Value) -> Result<(), String>;
    fn reach_avoid(&mut self, x: Position3, u: Region) -> Result<(), String>;
    fn data(&self) -> &AppData;
}

/// Evaluation context for declaration sizes and initializers, before any robot runs.
struct StaticHost<'a> {
    n: u32,
    data: &'a AppData,
}

impl Host for StaticHost<'_> {
    fn robot(&self) -> Option<RobotId> {
        None
    }
    fn num_bots(&self) -> u32 {
        self.n
    }
    fn now(&self) -> SimTime {
        SimTime::ZERO
    }
    fn current_pos(&self) -> Option<Position3> {
        None
    }
    fn flag(&self, _: Flag) -> Option<bool> {
        None
    }
    fn read_shared(&self, _: &str) -> Option<Value> {
        None
    }
    fn write_shared(&mut self, name: &str, _: Value) -> Result<(), String> {
        Err(format!("cannot write {name} here"))
    }
    fn reach_avoid(&mut self, _: Position3, _: Region) -> Result<(), String> {
        Err("doReachAvoid is not available here".into())
    }
    fn data(&self) -> &AppData {
        self.data
    }
}

pub fn element_name(array: &str, i: usize) -> String {
    format!("{array}[{i}]")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharedLayout {
    pub storage: Storage,
    pub ty: Type,
    /// Slot count for arrays.
    pub len: Option<usize>,
    pub initial: Value,
}

/// Run-wide facts about a program: parameter values and the shape of its shared state.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub params: BTreeMap<String, Value>,
    pub shared: BTreeMap<String, SharedLayout>,
    pub participants: u32,
}

fn coerce(ty: Type, v: Value, what: &str) -> R<Value> {
    match (ty, v) {
        (_, Value::Null) => Ok(Value::Null),
        (Type::Int, Value::Int(i)) => Ok(Value::Int(i)),
        (Type::Real, Value::Int(i)) => Ok(Value::Real(i as f64)),
        (Type::Real, Value::Real(r)) => Ok(Value::Real(r)),
        (Type::Bool, Value::Bool(b)) => Ok(Value::Bool(b)),
        (Type::Pos, Value::Pos(p)) => Ok(Value::Pos(p)),
        (Type::Region, Value::Region(r)) => Ok(Value::Region(r)),
        (Type::Region, Value::Int(0)) => Ok(Value::Region(Region::empty())),
        (ty, v) => Err(RuntimeFault::new(format!("{what}: expected {}, got {}", ty.keyword(), v.type_name()))),
    }
}

fn as_len(v: Value, what: &str) -> R<usize> {
    match v {
        Value::Int(i) if i >= 0 => Ok(i as usize),
        v => Err(RuntimeFault::new(format!("{what}: array size must be a non-negative int, got {v:?}"))),
    }
}

impl Layout {
    pub fn new(p: &Program, overrides: &BTreeMap<String, Value>, data: &AppData, participants: u32) -> R<Layout> {
        for k in overrides.keys() {
            if p.decl(k).is_none_or(|d| d.storage != Storage::Param) {
                return Err(RuntimeFault::new(format!("`{k}` is not a parameter of {}", p.name)));
            }
        }
        let mut layout = Layout { params: BTreeMap::new(), shared: BTreeMap::new(), participants };
        let mut host = StaticHost { n: participants, data };
        for d in &p.decls {
            let mut locals = HashMap::new();
            for (k, v) in &layout.params {
                locals.insert(k.clone(), v.clone());
            }
            let mut ev = Eval { locals: &mut locals, layout: &layout, host: &mut host, start: SimTime::ZERO, loops: Vec::new() };
            match d.storage {
                Storage::Param => {
                    let v = match overrides.get(&d.name) {
                        Some(v) => v.clone(),
                        None => ev.expr(d.init.as_ref().expect("parser requires a default"))?,
                    };
                    let v = coerce(d.ty, v, &d.name)?;
                    layout.params.insert(d.name.clone(), v);
                }
                Storage::SharedSw | Storage::SharedMw => {
                    let len = match &d.array {
                        None => None,
                        Some(ArraySize::Participants) => Some(participants as usize),
                        Some(ArraySize::Fixed(e)) => Some(as_len(ev.expr(e)?, &d.name)?),
                    };
                    let initial = match &d.init {
                        Some(e) => coerce(d.ty, ev.expr(e)?, &d.name)?,
                        None => Value::Null,
                    };
                    layout.shared.insert(d.name.clone(), SharedLayout { storage: d.storage, ty: d.ty, len, initial });
                }
                Storage::Local => {}
            }
        }
        Ok(layout)
    }

    /// DSM declarations for every shared slot, identical on every replica.
    pub fn shared_var_decls(&self) -> Vec<SharedVarDecl> {
        let mut out = Vec::new();
        for (name, s) in &self.shared {
            let writer = |i: usize| match s.storage {
                Storage::SharedSw => Writer::Robot(RobotId(i as u32)),
                _ => Writer::Multi,
            };
            match s.len {
                None => out.push(SharedVarDecl { name: name.clone(), writer: Writer::Multi, initial: s.initial.clone() }),
                Some(n) => {
                    for i in 0..n {
                        out.push(SharedVarDecl { name: element_name(name, i), writer: writer(i), initial: s.initial.clone() });
                    }
                }
            }
        }
        out
    }
}

/// Election over an id slot array: the max id once every slot is filled; after the timeout,
/// the max of what is observed provided a majority is observed.
pub fn elect_from(observed: &[Option<i64>], timed_out: bool) -> Result<Option<i64>, String> {
    let seen: Vec<i64> = observed.iter().flatten().copied().collect();
    if !observed.is_empty() && seen.len() == observed.len() {
        return Ok(seen.into_iter().max());
    }
    if !timed_out {
        return Ok(None);
    }
    if 2 * seen.len() > observed.len() {
        Ok(seen.into_iter().max())
    } else {
        Err(format!("leader election timed out with {} of {} participants observed", seen.len(), observed.len()))
    }
}

struct Eval<'a> {
    locals: &'a mut HashMap<String, Value>,
    layout: &'a Layout,
    host: &'a mut dyn Host,
    start: SimTime,
    loops: Vec<(String, Value)>,
}

fn num(v: &Value) -> Option<f64> {
    match *v {
        Value::Int(i) => Some(i as f64),
        Value::Real(r) => Some(r),
        _ => None,
    }
}

fn int(v: Value, what: &str) -> R<i64> {
    match v {
        Value::Int(i) => Ok(i),
        v => Err(RuntimeFault::new(format!("{what}: expected int, got {}", v.type_name()))),
    }
}

fn real(v: Value, what: &str) -> R<f64> {
    num(&v).ok_or_else(|| RuntimeFault::new(format!("{what}: expected a number, got {}", v.type_name())))
}

fn position(v: Value, what: &str) -> R<Position3> {
    match v {
        Value::Pos(p) => Ok(p),
        v => Err(RuntimeFault::new(format!("{what}: expected pos, got {}", v.type_name()))),
    }
}

fn index_in(i: i64, len: usize, what: &str) -> R<usize> {
    if i >= 0 && (i as usize) < len {
        Ok(i as usize)
    } else {
        Err(RuntimeFault::new(format!("{what}: index {i} out of bounds for length {len}")))
    }
}

impl Eval<'_> {
    fn read_var(&mut self, name: &str) -> R<Value> {
        if let Some((_, v)) = self.loops.iter().rev().find(|(n, _)| n == name) {
            return Ok(v.clone());
        }
        let flag = match name {
            "active" => Some(Flag::Active),
            "done" => Some(Flag::Done),
            "failed" => Some(Flag::Failed),
            _ => None,
        };
        if let Some(f) = flag {
            let v = self.host.flag(f).ok_or_else(|| RuntimeFault::new(format!("`{name}` is not available here")))?;
            return Ok(Value::Bool(v));
        }
        if let Some(v) = self.layout.params.get(name).or_else(|| self.locals.get(name)) {
            return Ok(v.clone());
        }
        if let Some(s) = self.layout.shared.get(name) {
            return Ok(match s.len {
                None => self.host.read_shared(name).unwrap_or(Value::Null),
                Some(n) => Value::List((0..n).map(|i| self.host.read_shared(&element_name(name, i)).unwrap_or(Value::Null)).collect()),
            });
        }
        Err(RuntimeFault::new(format!("`{name}` is not defined here")))
    }

    fn read_index(&mut self, name: &str, i: i64) -> R<Value> {
        if let Some(s) = self.layout.shared.get(name) {
            let n = s.len.ok_or_else(|| RuntimeFault::new(format!("`{name}` is not an array")))?;
            let k = index_in(i, n, name)?;
            return Ok(self.host.read_shared(&element_name(name, k)).unwrap_or(Value::Null));
        }
        match self.locals.get(name) {
            Some(Value::List(xs)) => Ok(xs[index_in(i, xs.len(), name)?].clone()),
            _ => Err(RuntimeFault::new(format!("`{name}` is not an array"))),
        }
    }

    fn expr(&mut self, e: &Expr) -> R<Value> {
        Ok(match e {
            Expr::Int(i) => Value::Int(*i),
            Expr::Real(r) => Value::Real(*r),
            Expr::Bool(b) => Value::Bool(*b),
            Expr::Var(v) => self.read_var(v)?,
            Expr::Index(a, i) => {
                let i = int(self.expr(i)?, a)?;
                self.read_index(a, i)?
            }
            Expr::Unary(UnOp::Neg, x) => match self.expr(x)? {
                Value::Int(i) => Value::Int(i.checked_neg().ok_or_else(|| RuntimeFault::new("integer overflow"))?),
                Value::Real(r) => Value::Real(-r),
                Value::Pos(p) => Value::Pos(p * -1.0),
                v => return Err(RuntimeFault::new(format!("cannot negate {}", v.type_name()))),
            },
            Expr::Unary(UnOp::Not, x) => match self.expr(x)? {
                Value::Bool(b) => Value::Bool(!b),
                v => return Err(RuntimeFault::new(format!("`!` needs bool, got {}", v.type_name()))),
            },
            Expr::Binary(BinOp::And, l, r) => {
                let a = self.boolean(l)?;
                Value::Bool(a && self.boolean(r)?)
            }
            Expr::Binary(BinOp::Or, l, r) => {
                let a = self.boolean(l)?;
                Value::Bool(a || self.boolean(r)?)
            }
            Expr::Binary(op, l, r) => {
                let a = self.expr(l)?;
                let b = self.expr(r)?;
                binary(*op, a, b)?
            }
            Expr::Call(f, args) => self.call(f, args)?,
        })
    }

    fn boolean(&mut self, e: &Expr) -> R<bool> {
        match self.expr(e)? {
            Value::Bool(b) => Ok(b),
            v => Err(RuntimeFault::new(format!("expected bool, got {}", v.type_name()))),
        }
    }

    fn call(&mut self, f: &str, args: &[Expr]) -> R<Value> {
        let mut a = Vec::with_capacity(args.len());
        for x in args {
            a.push(self.expr(x)?);
        }
        let mut a = a.into_iter();
        let mut arg = || a.next().expect("arity checked by the parser");
        let unavailable = |what: &str| RuntimeFault::new(format!("{what} is not available here"));
        Ok(match f {
            "getId" => Value::Int(i64::from(self.host.robot().ok_or_else(|| unavailable("getId"))?.0)),
            "numBots" => Value::Int(i64::from(self.host.num_bots())),
            "getPos" => Value::Pos(self.host.current_pos().ok_or_else(|| unavailable("getPos"))?),
            "doReachAvoid" => {
                let x = position(arg(), "doReachAvoid target")?;
                let u = match coerce(Type::Region, arg(), "doReachAvoid unsafe set")? {
                    Value::Region(r) => r,
                    _ => return Err(RuntimeFault::new("doReachAvoid unsafe set is unset")),
                };
                self.host.reach_avoid(x, u).map_err(RuntimeFault::new)?;
                Value::Null
            }
            "bisector" => {
                let Value::List(xs) = arg() else { return Err(RuntimeFault::new("bisector expects a pos array")) };
                let mut pts = Vec::with_capacity(xs.len());
                for x in xs {
                    pts.push(position(x, "bisector: every slot must be set")?);
                }
                let i = int(arg(), "bisector index")?;
                let n = int(arg(), "bisector count")?;
                let len = real(arg(), "bisector len")?;
                let i = index_in(i, pts.len(), "bisector")?;
                if n as usize != pts.len() {
                    return Err(RuntimeFault::new(format!("bisector: n = {n} but array has {} slots", pts.len())));
                }
                Value::Pos(crate::apps::bisector(&pts, i, len).unwrap_or(pts[i]))
            }
            "max" | "min" => {
                let (x, y) = (arg(), arg());
                match (&x, &y) {
                    (Value::Int(p), Value::Int(q)) => Value::Int(if f == "max" { *p.max(q) } else { *p.min(q) }),
                    _ => {
                        let (p, q) = (real(x, f)?, real(y, f)?);
                        Value::Real(if f == "max" { p.max(q) } else { p.min(q) })
                    }
                }
            }
            "abs" => match arg() {
                Value::Int(i) => Value::Int(i.checked_abs().ok_or_else(|| RuntimeFault::new("integer overflow"))?),
                v => Value::Real(real(v, "abs")?.abs()),
            },
            "dist" => Value::Real(dist(&position(arg(), "dist")?, &position(arg(), "dist")?)),
            "pos" => Value::Pos(Position3::new(real(arg(), "pos.x")?, real(arg(), "pos.y")?, real(arg(), "pos.z")?)),
            "real" => Value::Real(real(arg(), "real")?),
            "waypoint" => {
                let i = int(arg(), "waypoint")?;
                let w = &self.host.data().waypoints;
                Value::Pos(w[index_in(i, w.len(), "waypoint")?])
            }
            "numWaypoints" => Value::Int(self.host.data().waypoints.len() as i64),
            "unsafe" => Value::Region(self.host.data().unsafe_region.clone()),
            "emptyRegion" => Value::Region(Region::empty()),
            "numRooms" => Value::Int(self.host.data().rooms.len() as i64),
            "roomEntrance" | "roomPointCount" => {
                let r = int(arg(), f)?;
                let rooms = &self.host.data().rooms;
                let room = &rooms[index_in(r, rooms.len(), f)?];
                if f == "roomEntrance" {
                    Value::Pos(room.entrance)
                } else {
                    Value::Int(room.points.len() as i64)
                }
            }
            "roomPoint" => {
                let r = int(arg(), f)?;
                let k = int(arg(), f)?;
                let rooms = &self.host.data().rooms;
                let room = &rooms[index_in(r, rooms.len(), f)?];
                Value::Pos(room.points[index_in(k, room.points.len(), f)?])
            }
            "electLeader" => {
                let Value::List(xs) = arg() else { return Err(RuntimeFault::new("electLeader expects an int array")) };
                let timeout = real(arg(), "electLeader timeout")?;
                let mut observed = Vec::with_capacity(xs.len());
                for x in xs {
                    observed.push(match x {
                        Value::Null => None,
                        v => Some(int(v, "electLeader slot")?),
                    });
                }
                let timed_out = self.host.now().saturating_sub(self.start) >= SimTime::from_secs(timeout);
                Value::Int(elect_from(&observed, timed_out).map_err(RuntimeFault::new)?.unwrap_or(-1))
            }
            "allSet" => match arg() {
                Value::List(xs) => Value::Bool(xs.iter().all(|x| *x != Value::Null)),
                v => return Err(RuntimeFault::new(format!("allSet expects an array, got {}", v.type_name()))),
            },
            _ => return Err(RuntimeFault::new(format!("unknown function {f}"))),
        })
    }

    fn stmts(&mut self, p: &Program, body: &[Stmt]) -> R<()> {
        for s in body {
            self.stmt(p, s)?;
        }
        Ok(())
    }

    fn stmt(&mut self, p: &Program, s: &Stmt) -> R<()> {
        match s {
            Stmt::Expr(e) => {
                self.expr(e)?;
            }
            Stmt::If { cond, then, els } => {
                if self.boolean(cond)? {
                    self.stmts(p, then)?;
                } else {
                    self.stmts(p, els)?;
                }
            }
            Stmt::For { var, from, to, body } => {
                let a = int(self.expr(from)?, "for")?;
                let b = int(self.expr(to)?, "for")?;
                for i in a..b {
                    self.loops.push((var.clone(), Value::Int(i)));
                    let r = self.stmts(p, body);
                    self.loops.pop();
                    r?;
                }
            }
            Stmt::Assign { name, index, value } => {
                let v = self.expr(value)?;
                let d = p.decl(name).ok_or_else(|| RuntimeFault::new(format!("`{name}` is not declared")))?;
                let v = coerce(d.ty, v, name)?;
                match (d.storage, index) {
                    (Storage::Local, None) => {
                        self.locals.insert(name.clone(), v);
                    }
                    (Storage::Local, Some(i)) => {
                        let i = int(self.expr(i)?, name)?;
                        let Some(Value::List(xs)) = self.locals.get_mut(name) else {
                            return Err(RuntimeFault::new(format!("`{name}` is not an array")));
                        };
                        let k = index_in(i, xs.len(), name)?;
                        xs[k] = v;
                    }
                    (Storage::SharedSw | Storage::SharedMw, idx) => {
                        let slot = match (idx, self.layout.shared.get(name).and_then(|s| s.len)) {
                            (Some(i), Some(n)) => {
                                let i = int(self.expr(i)?, name)?;
                                element_name(name, index_in(i, n, name)?)
                            }
                            (None, None) => name.clone(),
                            _ => return Err(RuntimeFault::new(format!("bad shared access to `{name}`"))),
                        };
                        self.host.write_shared(&slot, v).map_err(RuntimeFault::new)?;
                    }
                    (Storage::Param, _) => return Err(RuntimeFault::new(format!("parameter `{name}` is read-only"))),
                }
            }
        }
        Ok(())
    }
}

fn binary(op: BinOp, a: Value, b: Value) -> R<Value> {
    use Value::*;
    let mismatch = |a: &Value, b: &Value| {
        RuntimeFault::new(format!("cannot apply `{}` to {} and {}", op.symbol(), a.type_name(), b.type_name()))
    };
    let overflow = || RuntimeFault::new("integer overflow");
    Ok(match (op, &a, &b) {
        (BinOp::Eq, _, _) | (BinOp::Ne, _, _) => {
            let eq = match (num(&a), num(&b)) {
                (Some(x), Some(y)) => x == y,
                _ => a == b,
            };
            Bool(eq == (op == BinOp::Eq))
        }
        (BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge, _, _) => {
            let (x, y) = match (&a, &b) {
                (Int(x), Int(y)) => (*x as f64, *y as f64),
                _ => (num(&a).ok_or_else(|| mismatch(&a, &b))?, num(&b).ok_or_else(|| mismatch(&a, &b))?),
            };
            Bool(match op {
                BinOp::Lt => x < y,
                BinOp::Le => x <= y,
                BinOp::Gt => x > y,
                _ => x >= y,
            })
        }
        (BinOp::Add, Int(x), Int(y)) => Int(x.checked_add(*y).ok_or_else(overflow)?),
        (BinOp::Sub, Int(x), Int(y)) => Int(x.checked_sub(*y).ok_or_else(overflow)?),
        (BinOp::Mul, Int(x), Int(y)) => Int(x.checked_mul(*y).ok_or_else(overflow)?),
        (BinOp::Div | BinOp::Rem, Int(_), Int(0)) => return Err(RuntimeFault::new("division by zero")),
        (BinOp::Div, Int(x), Int(y)) => Int(x.checked_div(*y).ok_or_else(overflow)?),
        (BinOp::Rem, Int(x), Int(y)) => Int(x.checked_rem(*y).ok_or_else(overflow)?),
        (BinOp::Add, Pos(p), Pos(q)) => Pos(*p + *q),
        (BinOp::Sub, Pos(p), Pos(q)) => Pos(*p - *q),
        (BinOp::Mul, Pos(p), _) if num(&b).is_some() => Pos(*p * num(&b).unwrap()),
        (BinOp::Mul, _, Pos(p)) if num(&a).is_some() => Pos(*p * num(&a).unwrap()),
        (BinOp::Div, Pos(p), _) if num(&b).is_some() => Pos(*p * (1.0 / num(&b).unwrap())),
        (BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div, _, _) => {
            let (x, y) = (num(&a).ok_or_else(|| mismatch(&a, &b))?, num(&b).ok_or_else(|| mismatch(&a, &b))?);
            Real(match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                _ => x / y,
            })
        }
        _ => return Err(mismatch(&a, &b)),
    })
}

/// One robot's running program.
pub struct AppInstance {
    program: Arc<Program>,
    layout: Arc<Layout>,
    locals: HashMap<String, Value>,
    started: bool,
    init_done: bool,
    start: SimTime,
    skips: Vec<u32>,
    fairness: u32,
    halted: Option<RuntimeFault>,
}

impl AppInstance {
    /// `fairness` is the number of consecutive skips after which an enabled block is forced.
    pub fn new(program: Arc<Program>, layout: Arc<Layout>, fairness: u32) -> AppInstance {
        let n = program.blocks.len();
        AppInstance {
            program,
            layout,
            locals: HashMap::new(),
            started: false,
            init_done: false,
            start: SimTime::ZERO,
            skips: vec![0; n],
            fairness: fairness.max(1),
            halted: None,
        }
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn halted(&self) -> Option<&RuntimeFault> {
        self.halted.as_ref()
    }

    pub fn local(&self, name: &str) -> Option<&Value> {
        self.locals.get(name)
    }

    fn start(&mut self, host: &mut dyn Host) -> R<()> {
        self.started = true;
        self.start = host.now();
        let program = Arc::clone(&self.program);
        for d in program.decls.iter().filter(|d| d.storage == Storage::Local) {
            let mut ev = Eval { locals: &mut self.locals, layout: &self.layout, host, start: self.start, loops: Vec::new() };
            let v = match &d.array {
                None => match &d.init {
                    Some(e) => coerce(d.ty, ev.expr(e)?, &d.name)?,
                    None => Value::Null,
                },
                Some(size) => {
                    let n = match size {
                        ArraySize::Participants => ev.host.num_bots() as usize,
                        ArraySize::Fixed(e) => as_len(ev.expr(e)?, &d.name)?,
                    };
                    let fill = match &d.init {
                        Some(e) => coerce(d.ty, ev.expr(e)?, &d.name)?,
                        None => Value::Null,
                    };
                    Value::List(vec![fill; n])
                }
            };
            self.locals.insert(d.name.clone(), v);
        }
        Ok(())
    }

    fn eval_pre(&mut self, host: &mut dyn Host, i: usize) -> R<bool> {
        let program = Arc::clone(&self.program);
        let b = &program.blocks[i];
        let mut ev = Eval { locals: &mut self.locals, layout: &self.layout, host, start: self.start, loops: Vec::new() };
        ev.boolean(&b.pre).map_err(|f| RuntimeFault { block: Some(b.name.clone()), ..f })
    }

    fn run(&mut self, host: &mut dyn Host, i: usize) -> R<()> {
        let program = Arc::clone(&self.program);
        let b = &program.blocks[i];
        let mut ev = Eval { locals: &mut self.locals, layout: &self.layout, host, start: self.start, loops: Vec::new() };
        ev.stmts(&program, &b.eff).map_err(|f| RuntimeFault { block: Some(b.name.clone()), ..f })
    }

    /// Runs at most one enabled block. Returns its index. A fault halts the instance.
    pub fn step(&mut self, host: &mut dyn Host, rng: &mut SimRng) -> R<Option<usize>> {
        if self.halted.is_some() {
            return Ok(None);
        }
        let r = self.step_inner(host, rng);
        if let Err(f) = &r {
            self.halted = Some(f.clone());
        }
        r
    }

    fn step_inner(&mut self, host: &mut dyn Host, rng: &mut SimRng) -> R<Option<usize>> {
        if !self.started {
            self.start(host)?;
        }
        if !self.init_done {
            let i = self.program.init_block().expect("parser guarantees an init block");
            if !self.eval_pre(host, i)? {
                return Ok(None);
            }
            self.init_done = true;
            self.run(host, i)?;
            return Ok(Some(i));
        }
        let mut enabled = Vec::new();
        for i in 0..self.program.blocks.len() {
            if !self.program.blocks[i].init && self.eval_pre(host, i)? {
                enabled.push(i);
            }
        }
        let Some(choice) = self.choose(&enabled, rng) else {
            self.skips.iter_mut().for_each(|s| *s = 0);
            return Ok(None);
        };
        for i in 0..self.skips.len() {
            self.skips[i] = if i != choice && enabled.contains(&i) { self.skips[i] + 1 } else { 0 };
        }
        self.run(host, choice)?;
        Ok(Some(choice))
    }

    fn choose(&self, enabled: &[usize], rng: &mut SimRng) -> Option<usize> {
        if enabled.is_empty() {
            return None;
        }
        let starved = enabled.iter().copied().filter(|&i| self.skips[i] >= self.fairness).max_by_key(|&i| (self.skips[i], std::cmp::Reverse(i)));
        if starved.is_some() {
            return starved;
        }
        let rank = |i: usize| self.program.blocks[i].priority.unwrap_or(i64::MAX);
        let best = enabled.iter().map(|&i| rank(i)).min()?;
        let top: Vec<usize> = enabled.iter().copied().filter(|&i| rank(i) == best).collect();
        if top.len() == 1 {
            return Some(top[0]);
        }
        Some(top[rng.random_range(0..top.len())])
    }
}

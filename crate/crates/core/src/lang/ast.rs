use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Type {
    Int,
    Real,
    Bool,
    Pos,
    Region,
}

impl Type {
    pub fn keyword(self) -> &'static str {
        match self {
            Type::Int => "int",
            Type::Real => "real",
            Type::Bool => "bool",
            Type::Pos => "pos",
            Type::Region => "region",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Storage {
    Local,
    /// Read-only local constant whose value the scenario may override.
    Param,
    SharedSw,
    SharedMw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ArraySize {
    /// `[]`: one slot per participant.
    Participants,
    Fixed(Expr),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decl {
    pub storage: Storage,
    pub ty: Type,
    pub name: String,
    pub array: Option<ArraySize>,
    pub init: Option<Expr>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
    Rem,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Or => "||",
            BinOp::And => "&&",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
        }
    }

    /// Binding strength; higher binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne => 3,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Int(i64),
    Real(f64),
    Bool(bool),
    Var(String),
    Index(String, Box<Expr>),
    Call(String, Vec<Expr>),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Stmt {
    Assign { name: String, index: Option<Expr>, value: Expr },
    If { cond: Expr, then: Vec<Stmt>, els: Vec<Stmt> },
    /// `for i in a..b`, half-open.
    For { var: String, from: Expr, to: Expr, body: Vec<Stmt> },
    Expr(Expr),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub init: bool,
    /// Lower numbers run first; `None` ranks below every number.
    pub priority: Option<i64>,
    pub pre: Expr,
    pub eff: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub name: String,
    pub decls: Vec<Decl>,
    pub blocks: Vec<Block>,
}

impl Program {
    pub fn decl(&self, name: &str) -> Option<&Decl> {
        self.decls.iter().find(|d| d.name == name)
    }

    pub fn init_block(&self) -> Option<usize> {
        self.blocks.iter().position(|b| b.init)
    }
}

/// Names readable without a declaration.
pub const FLAG_NAMES: [&str; 3] = ["active", "done", "failed"];

/// Built-in functions and their arities.
pub const BUILTINS: &[(&str, usize)] = &[
    ("getId", 0),
    ("numBots", 0),
    ("getPos", 0),
    ("doReachAvoid", 2),
    ("bisector", 4),
    ("max", 2),
    ("min", 2),
    ("abs", 1),
    ("dist", 2),
    ("pos", 3),
    ("real", 1),
    ("waypoint", 1),
    ("numWaypoints", 0),
    ("unsafe", 0),
    ("emptyRegion", 0),
    ("numRooms", 0),
    ("roomEntrance", 1),
    ("roomPointCount", 1),
    ("roomPoint", 2),
    ("electLeader", 2),
    ("allSet", 1),
];

pub fn builtin_arity(name: &str) -> Option<usize> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, a)| *a)
}

use std::collections::{BTreeSet, HashMap};

use super::ast::*;
use super::lexer::{lex, Tok, Token};
use super::LangError;

const TYPES: &[(&str, Type)] = &[
    ("int", Type::Int),
    ("real", Type::Real),
    ("bool", Type::Bool),
    ("pos", Type::Pos),
    ("ItemPosition", Type::Pos),
    ("region", Type::Region),
];

fn type_of(s: &str) -> Option<Type> {
    TYPES.iter().find(|(n, _)| *n == s).map(|(_, t)| *t)
}

/// A write to a single-writer array whose index must be provably the writer's own id.
struct SwWrite {
    array: String,
    index: Expr,
    line: usize,
    col: usize,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    decls: HashMap<String, Decl>,
    scopes: Vec<String>,
    sw_writes: Vec<SwWrite>,
    assigned: BTreeSet<String>,
}

pub fn parse_program(src: &str) -> Result<Program, LangError> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        decls: HashMap::new(),
        scopes: Vec::new(),
        sw_writes: Vec::new(),
        assigned: BTreeSet::new(),
    };
    let prog = p.program()?;
    p.check_single_writer(&prog)?;
    Ok(prog)
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, LangError> {
        let t = self.peek();
        Err(LangError::syntax(t.line, t.col, msg))
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(i) => format!("`{i}`"),
            Tok::Real(r) => format!("`{r}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".into(),
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(&self.peek().tok, Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, s: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(x) if x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), LangError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            let found = Self::describe(&self.peek().tok);
            self.err(format!("expected `{s}`, found {found}"))
        }
    }

    fn expect_kw(&mut self, s: &str) -> Result<(), LangError> {
        if self.is_kw(s) {
            self.next();
            Ok(())
        } else {
            let found = Self::describe(&self.peek().tok);
            self.err(format!("expected `{s}`, found {found}"))
        }
    }

    fn ident(&mut self) -> Result<String, LangError> {
        match &self.peek().tok {
            Tok::Ident(s) => {
                let s = s.clone();
                self.next();
                Ok(s)
            }
            t => {
                let found = Self::describe(t);
                self.err(format!("expected a name, found {found}"))
            }
        }
    }

    fn program(&mut self) -> Result<Program, LangError> {
        self.expect_kw("program")?;
        let name = self.ident()?;
        self.expect_sym("{")?;
        let mut decls = Vec::new();
        let mut blocks: Vec<Block> = Vec::new();
        while !self.is_sym("}") {
            if matches!(self.peek().tok, Tok::Eof) {
                return self.err("unexpected end of input, expected `}`");
            }
            if self.at_decl() {
                if !blocks.is_empty() {
                    return self.err("declarations must precede blocks");
                }
                let d = self.decl()?;
                self.decls.insert(d.name.clone(), d.clone());
                decls.push(d);
            } else {
                let (line, col) = (self.peek().line, self.peek().col);
                let b = self.block()?;
                if blocks.iter().any(|x| x.name == b.name) {
                    return Err(LangError::semantic(line, col, format!("duplicate block `{}`", b.name)));
                }
                blocks.push(b);
            }
        }
        self.expect_sym("}")?;
        if !matches!(self.peek().tok, Tok::Eof) {
            return self.err("trailing input after program");
        }
        match blocks.iter().filter(|b| b.init).count() {
            1 => {}
            0 => return self.err("program has no init block"),
            _ => return self.err("program has more than one init block"),
        }
        Ok(Program { name, decls, blocks })
    }

    fn at_decl(&self) -> bool {
        match &self.peek().tok {
            Tok::Ident(s) if matches!(s.as_str(), "param" | "sharedsw" | "sharedmw" | "local") => true,
            Tok::Ident(s) => type_of(s).is_some() && matches!(self.peek_at(1), Tok::Ident(_)),
            _ => false,
        }
    }

    fn decl(&mut self) -> Result<Decl, LangError> {
        let (line, col) = (self.peek().line, self.peek().col);
        let storage = match &self.peek().tok {
            Tok::Ident(s) if s == "param" => Storage::Param,
            Tok::Ident(s) if s == "sharedsw" => Storage::SharedSw,
            Tok::Ident(s) if s == "sharedmw" => Storage::SharedMw,
            Tok::Ident(s) if s == "local" => Storage::Local,
            _ => Storage::Local,
        };
        if self.is_kw("param") || self.is_kw("sharedsw") || self.is_kw("sharedmw") || self.is_kw("local") {
            self.next();
        }
        let tname = self.ident()?;
        let Some(ty) = type_of(&tname) else {
            return Err(LangError::syntax(line, col, format!("unknown type `{tname}`")));
        };
        let name = self.ident()?;
        if self.decls.contains_key(&name) || FLAG_NAMES.contains(&name.as_str()) {
            return Err(LangError::semantic(line, col, format!("`{name}` declared twice")));
        }
        let array = if self.eat_sym("[") {
            if self.eat_sym("]") {
                Some(ArraySize::Participants)
            } else {
                let e = self.expr()?;
                self.expect_sym("]")?;
                Some(ArraySize::Fixed(e))
            }
        } else {
            None
        };
        let init = if self.eat_sym("=") { Some(self.expr()?) } else { None };
        self.expect_sym(";")?;
        let fail = |m: &str| Err(LangError::semantic(line, col, format!("`{name}`: {m}")));
        match (storage, &array) {
            (Storage::SharedSw, Some(ArraySize::Participants)) => {
                if init.is_some() {
                    return fail("single-writer arrays start unset and take no initializer");
                }
            }
            (Storage::SharedSw, _) => return fail("single-writer variables are declared as `name[]`"),
            (Storage::Param, Some(_)) => return fail("parameters are scalars"),
            (Storage::Param, None) if init.is_none() => return fail("parameters need a default value"),
            (Storage::Local | Storage::SharedMw, Some(ArraySize::Participants)) | (Storage::Param, _) => {}
            _ => {}
        }
        Ok(Decl { storage, ty, name, array, init })
    }

    fn block(&mut self) -> Result<Block, LangError> {
        let init = if self.is_kw("init") {
            self.next();
            true
        } else {
            false
        };
        let name = self.ident()?;
        self.expect_sym("(")?;
        self.expect_sym(")")?;
        let priority = if self.is_kw("priority") {
            self.next();
            let neg = self.eat_sym("-");
            match self.next().tok {
                Tok::Int(i) => Some(if neg { -i } else { i }),
                t => return self.err(format!("expected a priority number, found {}", Self::describe(&t))),
            }
        } else {
            None
        };
        self.expect_sym("{")?;
        self.expect_kw("pre")?;
        self.expect_sym(":")?;
        let pre = self.expr()?;
        self.expect_sym(";")?;
        self.expect_kw("eff")?;
        self.expect_sym(":")?;
        let eff = self.stmts()?;
        self.expect_sym("}")?;
        Ok(Block { name, init, priority, pre, eff })
    }

    fn stmts(&mut self) -> Result<Vec<Stmt>, LangError> {
        let mut out = Vec::new();
        while !self.is_sym("}") {
            if matches!(self.peek().tok, Tok::Eof) {
                return self.err("unexpected end of input, expected `}`");
            }
            out.push(self.stmt()?);
        }
        Ok(out)
    }

    fn braced(&mut self) -> Result<Vec<Stmt>, LangError> {
        self.expect_sym("{")?;
        let s = self.stmts()?;
        self.expect_sym("}")?;
        Ok(s)
    }

    fn stmt(&mut self) -> Result<Stmt, LangError> {
        let (line, col) = (self.peek().line, self.peek().col);
        if self.is_kw("if") {
            self.next();
            let cond = self.expr()?;
            let then = self.braced()?;
            let els = if self.is_kw("else") {
                self.next();
                if self.is_kw("if") {
                    vec![self.stmt()?]
                } else {
                    self.braced()?
                }
            } else {
                Vec::new()
            };
            return Ok(Stmt::If { cond, then, els });
        }
        if self.is_kw("for") {
            self.next();
            let var = self.ident()?;
            if self.decls.contains_key(&var) || self.scopes.contains(&var) {
                return Err(LangError::semantic(line, col, format!("loop variable `{var}` shadows another name")));
            }
            self.expect_kw("in")?;
            let from = self.expr()?;
            self.expect_sym("..")?;
            let to = self.expr()?;
            self.scopes.push(var.clone());
            let body = self.braced();
            self.scopes.pop();
            return Ok(Stmt::For { var, from, to, body: body? });
        }
        if let (Tok::Ident(name), Tok::Sym(s)) = (self.peek().tok.clone(), self.peek_at(1).clone()) {
            if s == "=" || s == "[" {
                // `name[...]` may still be an expression statement; only commit once `=` is seen
                let save = self.pos;
                self.next();
                let index = if self.eat_sym("[") {
                    let e = self.expr()?;
                    self.expect_sym("]")?;
                    Some(e)
                } else {
                    None
                };
                if self.eat_sym("=") {
                    let value = self.expr()?;
                    self.expect_sym(";")?;
                    self.check_assign(&name, index.as_ref(), line, col)?;
                    return Ok(Stmt::Assign { name, index, value });
                }
                self.pos = save;
            }
        }
        let e = self.expr()?;
        if !matches!(e, Expr::Call(..)) {
            return Err(LangError::syntax(line, col, "only calls may be used as statements"));
        }
        self.expect_sym(";")?;
        Ok(Stmt::Expr(e))
    }

    fn check_assign(&mut self, name: &str, index: Option<&Expr>, line: usize, col: usize) -> Result<(), LangError> {
        if self.scopes.iter().any(|s| s == name) || FLAG_NAMES.contains(&name) {
            return Err(LangError::semantic(line, col, format!("`{name}` is read-only")));
        }
        let Some(d) = self.decls.get(name) else {
            return Err(LangError::UndeclaredVariable { name: name.into(), line, col });
        };
        if d.storage == Storage::Param {
            return Err(LangError::semantic(line, col, format!("parameter `{name}` is read-only")));
        }
        match (&d.array, index) {
            (Some(_), None) => return Err(LangError::semantic(line, col, format!("array `{name}` needs an index"))),
            (None, Some(_)) => return Err(LangError::semantic(line, col, format!("`{name}` is not an array"))),
            _ => {}
        }
        if d.storage == Storage::SharedSw {
            let index = index.expect("arrays carry an index").clone();
            self.sw_writes.push(SwWrite { array: name.into(), index, line, col });
        }
        if d.storage == Storage::Local && index.is_none() {
            self.assigned.insert(name.into());
        }
        Ok(())
    }

    /// A single-writer slot may only be written at index `getId()` or through a local that
    /// is initialised from `getId()` and never reassigned.
    fn check_single_writer(&self, prog: &Program) -> Result<(), LangError> {
        let own_id = |e: &Expr| match e {
            Expr::Call(f, a) if f == "getId" && a.is_empty() => true,
            Expr::Var(v) => prog.decl(v).is_some_and(|d| {
                d.storage == Storage::Local
                    && d.array.is_none()
                    && matches!(&d.init, Some(Expr::Call(f, a)) if f == "getId" && a.is_empty())
                    && !self.assigned.contains(v)
            }),
            _ => false,
        };
        for w in &self.sw_writes {
            if !own_id(&w.index) {
                return Err(LangError::WriteToForeignSharedVar { name: w.array.clone(), line: w.line, col: w.col });
            }
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, LangError> {
        self.binary(1)
    }

    fn binop(&self) -> Option<BinOp> {
        let Tok::Sym(s) = self.peek().tok else { return None };
        Some(match s {
            "||" => BinOp::Or,
            "&&" => BinOp::And,
            "==" => BinOp::Eq,
            "!=" => BinOp::Ne,
            "<" => BinOp::Lt,
            "<=" => BinOp::Le,
            ">" => BinOp::Gt,
            ">=" => BinOp::Ge,
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            "/" => BinOp::Div,
            "%" => BinOp::Rem,
            _ => return None,
        })
    }

    /// Precedence climbing; every binary operator is left-associative.
    fn binary(&mut self, min: u8) -> Result<Expr, LangError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.binop() {
            if op.precedence() < min {
                break;
            }
            self.next();
            let rhs = self.binary(op.precedence() + 1)?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, LangError> {
        if self.eat_sym("-") {
            return Ok(Expr::Unary(UnOp::Neg, Box::new(self.unary()?)));
        }
        if self.eat_sym("!") {
            return Ok(Expr::Unary(UnOp::Not, Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, LangError> {
        let t = self.next();
        match t.tok {
            Tok::Int(i) => Ok(Expr::Int(i)),
            Tok::Real(r) => Ok(Expr::Real(r)),
            Tok::Sym("(") => {
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(s) if s == "true" => Ok(Expr::Bool(true)),
            Tok::Ident(s) if s == "false" => Ok(Expr::Bool(false)),
            Tok::Ident(name) => {
                if self.eat_sym("(") {
                    let mut args = Vec::new();
                    if !self.is_sym(")") {
                        loop {
                            args.push(self.expr()?);
                            if !self.eat_sym(",") {
                                break;
                            }
                        }
                    }
                    self.expect_sym(")")?;
                    match builtin_arity(&name) {
                        None => return Err(LangError::semantic(t.line, t.col, format!("unknown function `{name}`"))),
                        Some(a) if a != args.len() => {
                            return Err(LangError::semantic(
                                t.line,
                                t.col,
                                format!("`{name}` takes {a} arguments, got {}", args.len()),
                            ))
                        }
                        Some(_) => {}
                    }
                    return Ok(Expr::Call(name, args));
                }
                let known = self.decls.contains_key(&name)
                    || self.scopes.contains(&name)
                    || FLAG_NAMES.contains(&name.as_str());
                if !known {
                    return Err(LangError::UndeclaredVariable { name, line: t.line, col: t.col });
                }
                if self.eat_sym("[") {
                    let i = self.expr()?;
                    self.expect_sym("]")?;
                    if self.decls.get(&name).is_none_or(|d| d.array.is_none()) {
                        return Err(LangError::semantic(t.line, t.col, format!("`{name}` is not an array")));
                    }
                    return Ok(Expr::Index(name, Box::new(i)));
                }
                Ok(Expr::Var(name))
            }
            other => Err(LangError::syntax(t.line, t.col, format!("expected an expression, found {}", Self::describe(&other)))),
        }
    }
}

use std::fmt::Write;

use super::ast::*;

pub fn print_program(p: &Program) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "program {} {{", p.name);
    for d in &p.decls {
        let _ = writeln!(s, "  {}", print_decl(d));
    }
    for b in &p.blocks {
        s.push('\n');
        let init = if b.init { "init " } else { "" };
        let prio = b.priority.map(|p| format!(" priority {p}")).unwrap_or_default();
        let _ = writeln!(s, "  {init}{}(){prio} {{", b.name);
        let _ = writeln!(s, "    pre: {};", print_expr(&b.pre));
        let _ = writeln!(s, "    eff:");
        print_stmts(&mut s, &b.eff, 3);
        let _ = writeln!(s, "  }}");
    }
    s.push_str("}\n");
    s
}

fn print_decl(d: &Decl) -> String {
    let storage = match d.storage {
        Storage::Local => "",
        Storage::Param => "param ",
        Storage::SharedSw => "sharedsw ",
        Storage::SharedMw => "sharedmw ",
    };
    let array = match &d.array {
        None => String::new(),
        Some(ArraySize::Participants) => "[]".into(),
        Some(ArraySize::Fixed(e)) => format!("[{}]", print_expr(e)),
    };
    let init = d.init.as_ref().map(|e| format!(" = {}", print_expr(e))).unwrap_or_default();
    format!("{storage}{} {}{array}{init};", d.ty.keyword(), d.name)
}

fn print_stmts(s: &mut String, stmts: &[Stmt], depth: usize) {
    let pad = "  ".repeat(depth);
    for st in stmts {
        match st {
            Stmt::Assign { name, index, value } => {
                let idx = index.as_ref().map(|i| format!("[{}]", print_expr(i))).unwrap_or_default();
                let _ = writeln!(s, "{pad}{name}{idx} = {};", print_expr(value));
            }
            Stmt::If { cond, then, els } => {
                let _ = writeln!(s, "{pad}if {} {{", print_expr(cond));
                print_stmts(s, then, depth + 1);
                if els.is_empty() {
                    let _ = writeln!(s, "{pad}}}");
                } else {
                    let _ = writeln!(s, "{pad}}} else {{");
                    print_stmts(s, els, depth + 1);
                    let _ = writeln!(s, "{pad}}}");
                }
            }
            Stmt::For { var, from, to, body } => {
                let _ = writeln!(s, "{pad}for {var} in {}..{} {{", print_expr(from), print_expr(to));
                print_stmts(s, body, depth + 1);
                let _ = writeln!(s, "{pad}}}");
            }
            Stmt::Expr(e) => {
                let _ = writeln!(s, "{pad}{};", print_expr(e));
            }
        }
    }
}

pub fn print_expr(e: &Expr) -> String {
    match e {
        Expr::Int(i) => i.to_string(),
        Expr::Real(r) => format!("{r:?}"),
        Expr::Bool(b) => b.to_string(),
        Expr::Var(v) => v.clone(),
        Expr::Index(a, i) => format!("{a}[{}]", print_expr(i)),
        Expr::Call(f, args) => {
            let a: Vec<String> = args.iter().map(print_expr).collect();
            format!("{f}({})", a.join(", "))
        }
        Expr::Unary(op, x) => {
            let sym = match op {
                UnOp::Neg => "-",
                UnOp::Not => "!",
            };
            match **x {
                Expr::Binary(..) => format!("{sym}({})", print_expr(x)),
                _ => format!("{sym}{}", print_expr(x)),
            }
        }
        Expr::Binary(op, l, r) => {
            let side = |x: &Expr, right: bool| match x {
                Expr::Binary(o, ..) if o.precedence() < op.precedence() || (right && o.precedence() == op.precedence()) => {
                    format!("({})", print_expr(x))
                }
                _ => print_expr(x),
            };
            format!("{} {} {}", side(l, false), op.symbol(), side(r, true))
        }
    }
}

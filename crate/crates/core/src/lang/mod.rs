//! A small guarded-command language for robot programs: declarations of local, parameter and
//! shared variables, followed by `pre` / `eff` blocks run one at a time by a scheduler.
//! See `docs/language.md` for the grammar.

pub mod ast;
pub mod interp;
pub mod lexer;
pub mod parser;
pub mod printer;

use thiserror::Error;

pub use ast::Program;
pub use interp::{elect_from, AppData, AppInstance, Host, Layout, Room, RuntimeFault};
pub use parser::parse_program;
pub use printer::print_program;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LangError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: undeclared variable `{name}`")]
    UndeclaredVariable { name: String, line: usize, col: usize },
    #[error("{line}:{col}: `{name}` is single-writer; a robot may only write its own slot `{name}[getId()]`")]
    WriteToForeignSharedVar { name: String, line: usize, col: usize },
    #[error("{line}:{col}: {msg}")]
    Semantic { line: usize, col: usize, msg: String },
}

impl LangError {
    pub(crate) fn syntax(line: usize, col: usize, msg: impl Into<String>) -> LangError {
        LangError::Syntax { line, col, msg: msg.into() }
    }

    pub(crate) fn semantic(line: usize, col: usize, msg: impl Into<String>) -> LangError {
        LangError::Semantic { line, col, msg: msg.into() }
    }
}

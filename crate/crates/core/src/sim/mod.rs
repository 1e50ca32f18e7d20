//! Deterministic discrete-event runs of a scenario: scenario loading, the engine loop and
//! CSV export of the resulting trace.

pub mod engine;
pub mod export;
pub mod scenario;

use thiserror::Error;

use crate::geometry::{RobotId, SimTime};
use crate::lang::{LangError, RuntimeFault};

pub use engine::{run, RunOutput};
pub use export::export_csv;
pub use scenario::{Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no seed: pass one explicitly or set `seed` in the scenario")]
    MissingSeed,
    #[error("scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("program: {0}")]
    Program(#[from] LangError),
    #[error("program setup: {0}")]
    Layout(RuntimeFault),
}

/// A runtime fault recorded during a run. The run itself carries on.
#[derive(Debug, Clone, PartialEq)]
pub struct Fault {
    pub t: SimTime,
    pub robot: Option<RobotId>,
    pub message: String,
}

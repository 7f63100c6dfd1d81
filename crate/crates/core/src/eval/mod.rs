//! Scenario replay against the full engine with a scripted desktop and a
//! scripted model, plus success-rate and usage reporting.
//!
//! Each run asks the task description verbatim, then any follow-up
//! questions, then invokes Adaptive Support until the scenario's success
//! predicate holds or `max_adaptive_rounds` is reached. The harness talks
//! to the engine through protocol lines only.

mod report;
mod runner;
mod scenario;

use thiserror::Error;

pub use report::{Aggregate, RunReport, REPORT_FORMAT_VERSION};
pub use runner::{run_scenario, run_suite, CallRecord, RunOptions, TaskRecord};
pub use scenario::{
    load_suite, Followthrough, SuccessPredicate, TaskScenario, DEFAULT_MAX_ADAPTIVE_ROUNDS,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::Scenario(_) => "scenario_error",
            EvalError::Io(_) => "io_error",
            EvalError::Protocol(_) => "protocol_error",
        }
    }
}

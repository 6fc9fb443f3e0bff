//! Scenario files, result bundles and the pipelines behind the `impulse-sip`
//! command-line tool.

pub mod bundle;
pub mod commands;
pub mod error;
pub mod scenario;

pub use bundle::{ResultBundle, RunStatus, SolverKind};
pub use commands::{compare_batch, compare_scenario, solve, validate, Check, Flags};
pub use error::{CliError, CliResult};
pub use scenario::Scenario;

//! Command-line front end: scenario files, solver dispatch by regime, curve
//! export, simulation runs and diagnostic suites.

pub mod args;
pub mod commands;
pub mod error;
pub mod output;
pub mod scenario;

pub use commands::{
    cmd_curve, cmd_evaluate, cmd_mstar, cmd_simulate, cmd_verify, Format, Output, RunOptions,
    StrategyChoice, Sweep,
};
pub use error::CliError;
pub use scenario::Scenario;

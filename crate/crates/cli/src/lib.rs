//! Experiment harness: dataset generation, training, evaluation and sweeps,
//! with JSON/CSV reports.

pub mod commands;
pub mod config;
pub mod data;
pub mod report;
pub mod runner;
pub mod seeds;

pub use commands::{run_command, Command};
pub use config::{Method, RunConfig, ScenarioChoice, SweepAxis, SweepSpec};
pub use jmf_core::{Error, Result};
pub use report::{MethodSummary, RunRecord, RunReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_IO: i32 = 4;
/// Any other failure, such as a simulation that produced non-finite states.
pub const EXIT_OTHER: i32 = 1;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidModel(_) | Error::Dimension(_) | Error::Parse { .. } | Error::Json(_) => {
            EXIT_CONFIG
        }
        Error::TrainingAborted(_) => EXIT_TRAINING,
        Error::Io(_) | Error::Csv(_) | Error::Format(_) | Error::EmptyDataset => EXIT_IO,
        _ => EXIT_OTHER,
    }
}

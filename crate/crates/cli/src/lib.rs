//! The `ctseg` command-line pipeline: prepare, train, predict, aggregate,
//! evaluate and selftest. Each subcommand is a plain function so it can be
//! driven from tests without spawning the binary.

pub mod aggregate;
pub mod config;
pub mod evaluate;
pub mod predict;
pub mod prepare;
pub mod selftest;
pub mod train;

mod io;

use thiserror::Error;

pub use aggregate::{cmd_aggregate, AggregateArgs};
pub use config::RunConfig;
pub use evaluate::{cmd_evaluate, EvaluateArgs};
pub use predict::{cmd_predict, PredictArgs};
pub use prepare::{cmd_prepare, PrepareArgs};
pub use selftest::{cmd_selftest, SelftestArgs};
pub use train::{cmd_train, TrainArgs};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad configuration, missing or malformed inputs.
    #[error("{0}")]
    Input(String),
    /// A check failed or a run could not complete.
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    /// 2 for input/usage problems, 1 for failed checks and runs.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl From<ctseg::data::DataError> for CliError {
    fn from(e: ctseg::data::DataError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ctseg::unet::ModelError> for CliError {
    fn from(e: ctseg::unet::ModelError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ctseg::train::TrainError> for CliError {
    fn from(e: ctseg::train::TrainError) -> Self {
        match e {
            ctseg::train::TrainError::Config(_) | ctseg::train::TrainError::EmptyDataset => {
                CliError::Input(e.to_string())
            }
            other => CliError::Failure(other.to_string()),
        }
    }
}

impl From<ctseg::inference::InferenceError> for CliError {
    fn from(e: ctseg::inference::InferenceError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ctseg::metrics::MetricsError> for CliError {
    fn from(e: ctseg::metrics::MetricsError) -> Self {
        CliError::Input(e.to_string())
    }
}

//! Experiment configuration, orchestration and CSV emission for the
//! command-line front end.

pub mod checks;
pub mod config;
pub mod run;

use thiserror::Error;

pub use checks::Check;
pub use config::{example_config, Approach, ExperimentConfig, PerturbRun, PerturbationConfig};
pub use run::{reproduce, run_bounds, run_perturb, run_solve};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    /// A checked inequality or ergodicity certificate failed.
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        use crate::Error as E;
        match e {
            E::StepTooLarge { .. } | E::DimensionTooSmall { .. } | E::InvalidInitialState(_) | E::InvalidWeights(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

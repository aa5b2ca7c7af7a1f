//! Experiment runner behind the `offce` binary.

pub mod config;
pub mod output;
pub mod problem;
pub mod run;

pub use config::ExperimentConfig;
pub use run::{run_experiment, RunRecord};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0} bound violation(s)")]
    BoundViolation(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::BoundViolation(_) => 3,
        }
    }
}

impl From<offpolicy_ce::Error> for CliError {
    fn from(e: offpolicy_ce::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else if let offpolicy_ce::Error::Io(io) = e {
            CliError::Io(io.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

//! Scenario registry, configuration layering, the composite run loop and
//! trace export. The CLI is a thin shell over this module.

pub mod config;
pub mod export;
pub mod model;
pub mod run;
pub mod scenarios;

use thiserror::Error;

use crate::canonical::CanonicalError;
use crate::descriptor::DescriptorError;
use crate::estimation::EstimationError;
use crate::numerics::NumericsError;

pub use config::{ConfigOverrides, Gamma, ObserverPath, ScenarioConfig};
pub use export::write_outputs;
pub use run::{audit, run_scenario, AssumptionCheck, RunOutput, RunSummary};
pub use scenarios::{default_config, describe, SCENARIOS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown scenario `{name}`; registered scenarios: {}", known.join(", "))]
    UnknownScenario { name: String, known: Vec<String> },
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("diverged at t = {time}: non-finite {what}")]
    Diverged { time: f64, what: String },
    #[error("i/o: {0}")]
    Io(String),
}

impl HarnessError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::UnknownScenario { .. } => 2,
            Self::Assumption(_) => 3,
            Self::Diverged { .. } => 4,
            Self::Io(_) => 1,
        }
    }
}

impl From<DescriptorError> for HarnessError {
    fn from(e: DescriptorError) -> Self {
        Self::Assumption(e.to_string())
    }
}

impl From<CanonicalError> for HarnessError {
    fn from(e: CanonicalError) -> Self {
        Self::Assumption(e.to_string())
    }
}

impl From<EstimationError> for HarnessError {
    fn from(e: EstimationError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<NumericsError> for HarnessError {
    fn from(e: NumericsError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

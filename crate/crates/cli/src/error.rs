use std::fmt;

use gom_core::evaluation::EvaluationError;
use gom_core::estimator::{FitError, ModelError};
use gom_core::identifiability::IdentifiabilityError;
use gom_core::io::IoError;
use gom_core::simulation::SimulationError;
use gom_core::vertex_hunting::VertexError;

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_PRECONDITION: i32 = 4;

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        Self::input(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::input(e.to_string())
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        Self::input(e.to_string())
    }
}

impl From<EvaluationError> for CliError {
    fn from(e: EvaluationError) -> Self {
        Self::input(e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Config(_) | FitError::Prune(VertexError::Config(_)) => Self::input(e.to_string()),
            // the message leads with the stage name
            other => Self {
                code: EXIT_NUMERIC,
                message: other.to_string(),
            },
        }
    }
}

impl From<IdentifiabilityError> for CliError {
    fn from(e: IdentifiabilityError) -> Self {
        match e {
            IdentifiabilityError::Precondition(_) | IdentifiabilityError::Validity { .. } => Self {
                code: EXIT_PRECONDITION,
                message: e.to_string(),
            },
            IdentifiabilityError::Model(m) => m.into(),
            IdentifiabilityError::Linalg(l) => Self {
                code: EXIT_NUMERIC,
                message: l.to_string(),
            },
        }
    }
}

//! Command implementations behind the `edgesplit` binary.

pub mod commands;
pub mod fixtures;
pub mod input;
pub mod manifest;

use std::path::Path;

use edgesplit::cost::CostError;
use edgesplit::dse::DseError;
use edgesplit::model::ModelError;
use edgesplit::pipeline::PipelineError;
use edgesplit::plan::PlanError;
use edgesplit::runtime::RuntimeError;
use edgesplit::specio::SpecError;
use edgesplit::split::SplitError;

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

/// A failed command: the process exit code and a message naming the culprit.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> CliError {
        CliError {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> CliError {
        CliError {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> CliError {
        CliError::io_msg(path, e)
    }

    pub fn io_msg(path: &Path, e: impl std::fmt::Display) -> CliError {
        CliError {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

fn classify(is_io: bool, message: String) -> CliError {
    CliError {
        code: if is_io { EXIT_IO } else { EXIT_VALIDATION },
        message,
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        classify(matches!(e, ModelError::Io { .. }), e.to_string())
    }
}

impl From<SpecError> for CliError {
    fn from(e: SpecError) -> Self {
        classify(matches!(e, SpecError::Io { .. }), e.to_string())
    }
}

impl From<SplitError> for CliError {
    fn from(e: SplitError) -> Self {
        match e {
            SplitError::Model(m) => m.into(),
            SplitError::InconsistentMapping(s) => s.into(),
            other => CliError::validation(other.to_string()),
        }
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        classify(matches!(e, PlanError::Io { .. }), e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Split(s) => s.into(),
            PipelineError::Plan(p) => p.into(),
        }
    }
}

impl From<CostError> for CliError {
    fn from(e: CostError) -> Self {
        classify(matches!(e, CostError::Io { .. }), e.to_string())
    }
}

impl From<DseError> for CliError {
    fn from(e: DseError) -> Self {
        match e {
            DseError::Cost(c) => c.into(),
            other => classify(matches!(other, DseError::Io { .. }), other.to_string()),
        }
    }
}

impl From<RuntimeError> for CliError {
    fn from(e: RuntimeError) -> Self {
        CliError::runtime(e.to_string())
    }
}

//! Platform and mapping specifications.

mod mapping;
mod platform;
mod resource;

use std::path::{Path, PathBuf};

pub use mapping::{parse_mapping, Assignment, MappingSpec};
pub use platform::{parse_platform, DeviceSpec, GpuSpec, PlatformSpec, MAX_CORES};
pub use resource::{resource_options, OptionPolicy, ResourceKey, ResourceKind};

#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate device {0}")]
    DuplicateDevice(String),
    #[error("invalid resource key {key:?}: {reason}")]
    InvalidKey { key: String, reason: String },
    #[error("unknown resource {key}: {reason}")]
    UnknownResource { key: String, reason: String },
    #[error("resource {0} appears twice in the mapping")]
    DuplicateResource(String),
    #[error("resource {0} has no layers")]
    EmptyAssignment(String),
    #[error("unknown layer {0}")]
    UnknownLayer(String),
    #[error("layer {0} is an Input/Output layer and cannot be mapped")]
    NotMappable(String),
    #[error("layer {0} is not assigned to any resource")]
    UnassignedLayer(String),
    #[error("layer {layer} is assigned to both {first} and {second}")]
    DuplicateAssignment {
        layer: String,
        first: String,
        second: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SpecError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        SpecError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

//! Plan execution: float kernels, the socket mesh, rank workers and the
//! multi-process launcher.
//!
//! Each rank runs one control thread that walks its plan. Inbound frames are
//! parked by reader threads in a mailbox keyed by `(buffer, sequence)`;
//! outbound frames are handed to one writer thread per destination, so a
//! `Send` never blocks on delivery. Repeated inferences reuse the plan with
//! the iteration index as sequence number, which lets upstream ranks run
//! ahead of downstream ones.

mod kernels;
mod launch;
mod mesh;
mod rank;
mod reference;
mod tensor;
pub mod wire;

use std::path::{Path, PathBuf};

use crate::plan::PlanError;

pub use kernels::{execute_layer, Executor};
pub use launch::{
    launch, run_worker, InferenceResult, LaunchOptions, WorkerArgs, WorkerCommand, ENDPOINTS_ENV,
    FAULT_ENV, RANK_ENV,
};
pub use mesh::RankEndpoints;
pub use rank::{peak_memory_estimate, run_rank, run_threads, RankOptions, RankResult, RankRuntime};
pub use reference::infer_reference;
pub use tensor::{decode_f32s, encode_f32s, read_raw_tensor, write_raw_tensor, Tensor};
pub use wire::Message;

/// Fixed per-rank runtime overhead added to memory estimates.
pub const RUNTIME_OVERHEAD_BYTES: usize = 4 << 20;

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("shape error at {layer:?}: {reason}")]
    Shape { layer: String, reason: String },
    #[error("unsupported operation: {0}")]
    UnsupportedOp(String),
    #[error("layer {layer}: weight {weight} is missing")]
    MissingWeight { layer: String, weight: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("peer rank {peer} unreachable: {reason}")]
    PeerUnreachable { peer: usize, reason: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("rank {rank}: timed out waiting for {what}")]
    Timeout { rank: usize, what: String },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to spawn rank {rank}: {reason}")]
    Spawn { rank: usize, reason: String },
    #[error("{}", format_rank_errors(.0))]
    Ranks(Vec<(usize, String)>),
}

impl RuntimeError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> RuntimeError {
        RuntimeError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn format_rank_errors(errs: &[(usize, String)]) -> String {
    let mut parts: Vec<String> = errs.iter().map(|(r, e)| format!("rank {r}: {e}")).collect();
    if parts.is_empty() {
        parts.push("unknown rank failure".into());
    }
    parts.join("; ")
}

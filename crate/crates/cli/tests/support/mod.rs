#![allow(dead_code)]

pub mod oracle;

use std::path::{Path, PathBuf};
use std::time::Duration;

use edgesplit::model::Model;
use edgesplit::runtime::{LaunchOptions, WorkerCommand};
use edgesplit::{zoo, Tensor32};

pub const BIN: &str = env!("CARGO_BIN_EXE_edgesplit");

pub fn fixtures_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Launch options that run ranks as `edgesplit rank` processes.
pub fn launch_options(work_dir: &Path, repeat: usize, timeout: Duration) -> LaunchOptions {
    let mut o = LaunchOptions::new(
        WorkerCommand {
            program: BIN.into(),
            args: vec!["rank".into()],
        },
        work_dir,
    );
    o.repeat = repeat;
    o.timeout = timeout;
    o
}

pub fn input_for(m: &Model, seed: u64) -> Tensor32 {
    let spec = m.shape(&m.input_layer().name).unwrap().clone();
    Tensor32::new(spec, zoo::random_input(m, seed)).unwrap()
}

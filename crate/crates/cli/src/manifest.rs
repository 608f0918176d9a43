use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<FileRecord, CliError> {
        let data = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(FileRecord {
            path: path.to_path_buf(),
            bytes: data.len() as u64,
            sha256: sha256_hex(&data),
        })
    }

    /// True when the file on disk still hashes to the recorded digest.
    pub fn matches_disk(&self) -> bool {
        fs::read(&self.path).is_ok_and(|d| sha256_hex(&d) == self.sha256)
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub wall_time_ms: f64,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    /// Command-specific extras (counts, timings, configuration).
    #[serde(default)]
    pub details: serde_json::Value,
}

fn unix_ms(t: SystemTime) -> u128 {
    t.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

/// Collects timings while a command runs.
pub struct ManifestBuilder {
    command: String,
    started: SystemTime,
    clock: Instant,
    inputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn start(command: &str, inputs: &[&Path]) -> ManifestBuilder {
        ManifestBuilder {
            command: command.to_string(),
            started: SystemTime::now(),
            clock: Instant::now(),
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
        }
    }

    /// Hashes every input and output and stamps the finish time.
    pub fn finish(self, outputs: &[PathBuf], details: serde_json::Value) -> Result<RunManifest, CliError> {
        let wall_time_ms = self.clock.elapsed().as_secs_f64() * 1e3;
        let hash_all = |ps: &[PathBuf]| ps.iter().map(|p| FileRecord::of(p)).collect::<Result<Vec<_>, _>>();
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command,
            started_unix_ms: unix_ms(self.started),
            finished_unix_ms: unix_ms(SystemTime::now()),
            wall_time_ms,
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(outputs)?,
            details,
        })
    }
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<RunManifest, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
    }
}

/// Every regular file below `dir`, sorted.
pub fn files_under(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).map_err(|e| CliError::io(&d, e))? {
            let p = e.map_err(|e| CliError::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

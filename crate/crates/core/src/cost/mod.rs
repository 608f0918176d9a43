//! Analytical cost model and the local profiler that feeds it.
//!
//! A mapping is scored by three objectives: the largest per-device energy
//! per inference, the largest per-device memory footprint, and pipeline
//! throughput. Throughput is governed by the slowest stage, where a stage is
//! one rank's compute plus the transfers it receives.

mod eval;
mod profiler;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::runtime::RUNTIME_OVERHEAD_BYTES;
use crate::specio::{ResourceKey, SpecError};

pub use eval::{evaluate_mapping, stage_times};
pub use profiler::{profile_layers, ProfileOptions};

#[derive(Debug, thiserror::Error)]
pub enum CostError {
    #[error("profile has no {what} for layer {layer} on {kind}")]
    MissingProfileEntry { layer: String, kind: String, what: &'static str },
    #[error("profile does not match the model: {0}")]
    ProfileMismatch(String),
    #[error(transparent)]
    Mapping(#[from] SpecError),
    #[error("degenerate cost: {0}")]
    Degenerate(String),
    #[error("profile parse error: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Measured or assumed cost of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    /// Resource kind (`cpu1`, `cpu6`, `gpu`, or `<device>/<kind>`) → ms per inference.
    pub latency_ms: BTreeMap<String, f64>,
    /// Resource kind → mJ per inference.
    pub energy_mj: BTreeMap<String, f64>,
    pub weight_bytes: u64,
    pub output_bytes: u64,
}

/// Cost of moving data between two ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkCost {
    /// Sustained bandwidth; `None` means transfers take no time beyond `latency_ms`.
    #[serde(default)]
    pub bytes_per_ms: Option<f64>,
    /// Fixed cost per message.
    #[serde(default)]
    pub latency_ms: f64,
    #[serde(default)]
    pub energy_mj_per_kb: f64,
}

impl LinkCost {
    pub fn free() -> LinkCost {
        LinkCost {
            bytes_per_ms: None,
            latency_ms: 0.0,
            energy_mj_per_kb: 0.0,
        }
    }
}

impl Default for LinkCost {
    fn default() -> Self {
        LinkCost::free()
    }
}

fn default_overhead() -> u64 {
    RUNTIME_OVERHEAD_BYTES as u64
}

/// Per-layer costs plus link costs (`profile.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub layers: BTreeMap<String, LayerCost>,
    /// Between ranks on different devices.
    pub link: LinkCost,
    /// Between ranks on the same device.
    #[serde(default)]
    pub intra_device: LinkCost,
    /// Fixed memory every rank adds to its device.
    #[serde(default = "default_overhead")]
    pub rank_overhead_bytes: u64,
}

impl Profile {
    pub fn parse(text: &str) -> Result<Profile, CostError> {
        let p: Profile = serde_json::from_str(text).map_err(|e| CostError::Parse(e.to_string()))?;
        p.check_values()?;
        Ok(p)
    }

    pub fn format(&self) -> String {
        serde_json::to_string_pretty(self).unwrap() + "\n"
    }

    pub fn read(path: &Path) -> Result<Profile, CostError> {
        let text = fs::read_to_string(path).map_err(|source| CostError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Profile::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), CostError> {
        fs::write(path, self.format()).map_err(|source| CostError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// All values finite and non-negative, bandwidth positive.
    pub fn check_values(&self) -> Result<(), CostError> {
        let bad = |what: String| Err(CostError::Parse(what));
        for (name, c) in &self.layers {
            for (kind, v) in c.latency_ms.iter().chain(&c.energy_mj) {
                if !v.is_finite() || *v < 0.0 {
                    return bad(format!("layer {name}, kind {kind}: value {v} is not a finite non-negative number"));
                }
            }
        }
        for (which, l) in [("link", &self.link), ("intra_device", &self.intra_device)] {
            if !(l.latency_ms.is_finite() && l.latency_ms >= 0.0 && l.energy_mj_per_kb.is_finite() && l.energy_mj_per_kb >= 0.0) {
                return bad(format!("{which}: latency and energy must be finite and non-negative"));
            }
            if let Some(b) = l.bytes_per_ms {
                if !(b.is_finite() && b > 0.0) {
                    return bad(format!("{which}: bytes_per_ms must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Checks that every hidden layer is present and its byte counts match
    /// the model.
    pub fn check_against(&self, m: &Model) -> Result<(), CostError> {
        for l in m.hidden_layers() {
            let c = self.layers.get(&l.name).ok_or_else(|| CostError::MissingProfileEntry {
                layer: l.name.clone(),
                kind: "any".into(),
                what: "entry",
            })?;
            let w = m.layer_weight_bytes(&l.name) as u64;
            let o = m.shape(&l.name).unwrap().byte_len() as u64;
            if c.weight_bytes != w || c.output_bytes != o {
                return Err(CostError::ProfileMismatch(format!(
                    "{}: profile says {} weight / {} output bytes, model has {w} / {o}",
                    l.name, c.weight_bytes, c.output_bytes
                )));
            }
        }
        Ok(())
    }

    /// A profile with the same latency for every hidden layer on every
    /// listed kind, and energy = latency × `power_w`.
    pub fn uniform(m: &Model, kinds: &[&str], latency_ms: f64, power_w: f64) -> Profile {
        let layers = m
            .hidden_layers()
            .map(|l| {
                let lat: BTreeMap<String, f64> = kinds.iter().map(|k| (k.to_string(), latency_ms)).collect();
                let en = lat.iter().map(|(k, v)| (k.clone(), v * power_w)).collect();
                (
                    l.name.clone(),
                    LayerCost {
                        latency_ms: lat,
                        energy_mj: en,
                        weight_bytes: m.layer_weight_bytes(&l.name) as u64,
                        output_bytes: m.shape(&l.name).unwrap().byte_len() as u64,
                    },
                )
            })
            .collect();
        Profile {
            layers,
            link: LinkCost::free(),
            intra_device: LinkCost::free(),
            rank_overhead_bytes: default_overhead(),
        }
    }

    /// Looks up a per-kind value, preferring `<device>/<kind>` over `<kind>`.
    pub(crate) fn lookup<'a>(
        map: &'a BTreeMap<String, f64>,
        key: &ResourceKey,
    ) -> Option<&'a f64> {
        let kind = key.profile_kind();
        map.get(&format!("{}/{kind}", key.device)).or_else(|| map.get(&kind))
    }
}

/// The three objectives in natural orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector<T> {
    pub max_device_energy_mj: T,
    pub throughput_fps: T,
    pub max_device_memory_mb: T,
}

impl<T: num_traits::ToPrimitive> ObjectiveVector<T> {
    pub fn to_f64(&self) -> ObjectiveVector<f64> {
        ObjectiveVector {
            max_device_energy_mj: self.max_device_energy_mj.to_f64().unwrap_or(f64::NAN),
            throughput_fps: self.throughput_fps.to_f64().unwrap_or(f64::NAN),
            max_device_memory_mb: self.max_device_memory_mb.to_f64().unwrap_or(f64::NAN),
        }
    }
}

impl ObjectiveVector<f64> {
    /// `[energy, memory, -throughput]`: every component is minimized.
    pub fn minimized(&self) -> [f64; 3] {
        [self.max_device_energy_mj, self.max_device_memory_mb, -self.throughput_fps]
    }
}

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{PlatformSpec, SpecError};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ResourceKind {
    /// A set of CPU cores; `arch` is the lower-cased architecture tag.
    Cpu { arch: String, slots: BTreeSet<u8> },
    Gpu,
}

/// A compute resource selection: a device plus a core subset, or its GPU.
///
/// Canonical text is `<device>_<arch><digits>` (digits strictly
/// increasing, e.g. `edge01_arm123`) or `<device>_gpu`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResourceKey {
    pub device: String,
    pub kind: ResourceKind,
}

impl ResourceKey {
    pub fn cpu(device: impl Into<String>, arch: &str, slots: impl IntoIterator<Item = u8>) -> Self {
        ResourceKey {
            device: device.into(),
            kind: ResourceKind::Cpu {
                arch: arch.to_ascii_lowercase(),
                slots: slots.into_iter().collect(),
            },
        }
    }

    pub fn gpu(device: impl Into<String>) -> Self {
        ResourceKey {
            device: device.into(),
            kind: ResourceKind::Gpu,
        }
    }

    pub fn is_gpu(&self) -> bool {
        matches!(self.kind, ResourceKind::Gpu)
    }

    pub fn slots(&self) -> Option<&BTreeSet<u8>> {
        match &self.kind {
            ResourceKind::Cpu { slots, .. } => Some(slots),
            ResourceKind::Gpu => None,
        }
    }

    /// Worker threads a rank on this resource uses: one per core, one for GPU.
    pub fn num_threads(&self) -> usize {
        match &self.kind {
            ResourceKind::Cpu { slots, .. } => slots.len(),
            ResourceKind::Gpu => 1,
        }
    }

    /// Profile class of the resource: `cpu<n>` for n cores, or `gpu`.
    pub fn profile_kind(&self) -> String {
        match &self.kind {
            ResourceKind::Cpu { slots, .. } => format!("cpu{}", slots.len()),
            ResourceKind::Gpu => "gpu".to_string(),
        }
    }

    /// Whether two resources on the same device compete for hardware.
    pub fn shares_hardware(&self, other: &ResourceKey) -> bool {
        if self.device != other.device {
            return false;
        }
        match (&self.kind, &other.kind) {
            (ResourceKind::Gpu, ResourceKind::Gpu) => true,
            (ResourceKind::Cpu { slots: a, .. }, ResourceKind::Cpu { slots: b, .. }) => {
                !a.is_disjoint(b)
            }
            _ => false,
        }
    }

    pub fn canonical_text(&self) -> String {
        self.to_string()
    }

    /// Checks the key against a platform: device exists, architecture
    /// matches, slots are in range, GPU is present.
    pub fn check(&self, platform: &PlatformSpec) -> Result<(), SpecError> {
        let unknown = |why: String| SpecError::UnknownResource {
            key: self.to_string(),
            reason: why,
        };
        let dev = platform
            .device(&self.device)
            .ok_or_else(|| unknown(format!("no device {}", self.device)))?;
        match &self.kind {
            ResourceKind::Gpu if dev.gpu.is_none() => Err(unknown(format!("device {} has no GPU", dev.name))),
            ResourceKind::Gpu => Ok(()),
            ResourceKind::Cpu { arch, slots } => {
                if *arch != dev.arch_tag() {
                    return Err(unknown(format!(
                        "device {} has cpu {}, not {arch}",
                        dev.name, dev.cpu_arch
                    )));
                }
                if let Some(s) = slots.iter().find(|&&s| s as u32 >= dev.cores) {
                    return Err(unknown(format!(
                        "slot {s} outside 0-{} on {}",
                        dev.cores - 1,
                        dev.name
                    )));
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for ResourceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ResourceKind::Gpu => write!(f, "{}_gpu", self.device),
            ResourceKind::Cpu { arch, slots } => {
                write!(f, "{}_{arch}", self.device)?;
                for s in slots {
                    write!(f, "{s}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for ResourceKey {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| SpecError::InvalidKey {
            key: s.to_string(),
            reason: why.to_string(),
        };
        let (device, rest) = s.rsplit_once('_').ok_or_else(|| bad("missing '_'"))?;
        if device.is_empty() || device.contains('_') {
            return Err(bad("empty or malformed device name"));
        }
        if rest == "gpu" {
            return Ok(ResourceKey::gpu(device));
        }
        let split = rest
            .find(|c: char| c.is_ascii_digit())
            .ok_or_else(|| bad("no core digits"))?;
        let (arch, digits) = rest.split_at(split);
        if arch.is_empty() || !arch.chars().all(|c| c.is_ascii_lowercase()) {
            return Err(bad("architecture tag must be lower-case letters"));
        }
        if !digits.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad("core list must be digits"));
        }
        let slots: Vec<u8> = digits.bytes().map(|b| b - b'0').collect();
        if slots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("core digits must be strictly increasing"));
        }
        Ok(ResourceKey::cpu(device, arch, slots))
    }
}

impl Serialize for ResourceKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ResourceKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which resource choices the DSE offers per device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptionPolicy {
    /// Single core (core 0), all cores, and the GPU when present.
    #[default]
    SingleAllGpu,
    /// Single core and all cores only.
    CpuOnly,
}

/// Enumerates the resource options for the search, device by device.
pub fn resource_options(platform: &PlatformSpec, policy: OptionPolicy) -> Vec<ResourceKey> {
    let mut out: Vec<ResourceKey> = Vec::new();
    for dev in &platform.devices {
        let arch = dev.arch_tag();
        let mut push = |k: ResourceKey| {
            if !out.contains(&k) {
                out.push(k);
            }
        };
        push(ResourceKey::cpu(&dev.name, &arch, [0]));
        push(ResourceKey::cpu(&dev.name, &arch, 0..dev.cores as u8));
        if policy == OptionPolicy::SingleAllGpu && dev.gpu.is_some() {
            push(ResourceKey::gpu(&dev.name));
        }
    }
    out
}

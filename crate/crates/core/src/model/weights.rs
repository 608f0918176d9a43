//! Weight store and the `ADCE` binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ADCE" | u32 version=1 | u32 entry count
//! per entry: u16 name length | UTF-8 name | u8 rank | rank x u32 dims | f32 payload
//! ```

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use super::{ModelError, TensorSpec};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"ADCE";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub spec: TensorSpec,
    pub data: Vec<f32>,
}

impl WeightEntry {
    pub fn new(spec: TensorSpec, data: Vec<f32>) -> Result<Self, ModelError> {
        spec.check()?;
        if data.len() != spec.numel() {
            return Err(ModelError::WeightMismatch(format!(
                "payload has {} values, shape {} needs {}",
                data.len(),
                spec,
                spec.numel()
            )));
        }
        Ok(WeightEntry { spec, data })
    }

    pub fn byte_len(&self) -> usize {
        self.data.len() * 4
    }
}

/// Named tensors in insertion order. Order is preserved so that
/// `encode(decode(bytes)) == bytes`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: IndexMap<String, WeightEntry>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, entry: WeightEntry) -> Result<(), ModelError> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(ModelError::WeightMismatch(format!(
                "weight name of {} bytes is too long",
                name.len()
            )));
        }
        if entry.spec.rank() > u8::MAX as usize {
            return Err(ModelError::WeightMismatch(format!("weight {name} has too many dims")));
        }
        if self.entries.contains_key(&name) {
            return Err(ModelError::WeightMismatch(format!("duplicate weight {name}")));
        }
        self.entries.insert(name, entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&WeightEntry> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &WeightEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn total_bytes(&self) -> usize {
        self.entries.values().map(WeightEntry::byte_len).sum()
    }

    pub fn param_count(&self) -> usize {
        self.entries.values().map(|e| e.data.len()).sum()
    }

    /// Copies the named entries, in the given order, into a new store.
    pub fn subset<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Result<WeightStore, ModelError> {
        let mut out = WeightStore::new();
        for name in names {
            let entry = self
                .get(name)
                .ok_or_else(|| ModelError::WeightMismatch(format!("missing weight {name}")))?;
            out.insert(name, entry.clone())?;
        }
        Ok(out)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + self.total_bytes() + 64 * self.len());
        buf.extend_from_slice(WEIGHTS_MAGIC);
        buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.push(entry.spec.rank() as u8);
            for &d in &entry.spec.dims {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &entry.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<WeightStore, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != WEIGHTS_MAGIC {
            return Err(ModelError::Parse("weights file: bad magic".into()));
        }
        let version = r.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(ModelError::Parse(format!("weights file: unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| ModelError::Parse("weights file: name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32()? as usize);
            }
            let spec = TensorSpec::new(dims);
            spec.check()
                .map_err(|e| ModelError::Parse(format!("weights file: entry {name}: {e}")))?;
            let n = spec.numel();
            let payload = r.take(n.checked_mul(4).ok_or_else(|| {
                ModelError::WeightMismatch(format!("weight {name}: payload size overflows"))
            })?).map_err(|_| {
                ModelError::WeightMismatch(format!("weight {name}: payload truncated"))
            })?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            store.insert(name, WeightEntry { spec, data })?;
        }
        if r.pos != bytes.len() {
            return Err(ModelError::WeightMismatch(format!(
                "weights file has {} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(store)
    }

    pub fn read(path: &Path) -> Result<WeightStore, ModelError> {
        let bytes = fs::read(path).map_err(|e| ModelError::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.encode()).map_err(|e| ModelError::io(path, e))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Parse("weights file: unexpected end of data".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

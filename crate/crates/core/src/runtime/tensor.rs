use std::fs;
use std::path::Path;

use crate::model::TensorSpec;
use crate::scalar::KernelFloat;

use super::RuntimeError;

/// Dense row-major (NCHW) tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub spec: TensorSpec,
    pub data: Vec<T>,
}

impl<T: KernelFloat> Tensor<T> {
    pub fn new(spec: TensorSpec, data: Vec<T>) -> Result<Self, RuntimeError> {
        if data.len() != spec.numel() {
            return Err(RuntimeError::Shape {
                layer: String::new(),
                reason: format!("{} values do not fill shape {}", data.len(), spec),
            });
        }
        Ok(Tensor { spec, data })
    }

    pub fn zeros(spec: TensorSpec) -> Self {
        let n = spec.numel();
        Tensor {
            spec,
            data: vec![T::zero(); n],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.spec.dims
    }

    pub fn from_f32(spec: TensorSpec, data: &[f32]) -> Result<Self, RuntimeError> {
        Self::new(spec, data.iter().map(|&v| T::widen(v)).collect())
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        Tensor {
            spec: self.spec.clone(),
            data: self.data.iter().map(|v| v.narrow()).collect(),
        }
    }

    /// Bitwise equality after narrowing to `f32`.
    pub fn bits_eq(&self, other: &Tensor<T>) -> bool {
        self.spec.dims == other.spec.dims
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.narrow().to_bits() == b.narrow().to_bits())
    }
}

impl Tensor<f32> {
    pub fn to_le_bytes(&self) -> Vec<u8> {
        encode_f32s(&self.data)
    }
}

pub fn encode_f32s(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_f32s(bytes: &[u8]) -> Option<Vec<f32>> {
    bytes.len().is_multiple_of(4).then(|| {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    })
}

/// Reads a raw little-endian float32 blob of exactly `spec.numel()` values.
pub fn read_raw_tensor(path: &Path, spec: &TensorSpec) -> Result<Tensor<f32>, RuntimeError> {
    let bytes = fs::read(path).map_err(|e| RuntimeError::io(path, e))?;
    let data = decode_f32s(&bytes)
        .filter(|d| d.len() == spec.numel())
        .ok_or_else(|| RuntimeError::Shape {
            layer: String::new(),
            reason: format!(
                "{}: {} bytes do not hold a {} float32 tensor",
                path.display(),
                bytes.len(),
                spec
            ),
        })?;
    Tensor::new(spec.clone(), data)
}

pub fn write_raw_tensor(path: &Path, t: &Tensor<f32>) -> Result<(), RuntimeError> {
    fs::write(path, t.to_le_bytes()).map_err(|e| RuntimeError::io(path, e))
}

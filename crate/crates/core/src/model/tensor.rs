use std::fmt;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Element type of a tensor. Only single precision is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    #[default]
    Float32,
}

impl DType {
    pub fn size_bytes(self) -> usize {
        match self {
            DType::Float32 => 4,
        }
    }
}

/// Shape and element type of a tensor (NCHW for 4-D, `[N, F]` for 2-D).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorSpec {
    pub dims: Vec<usize>,
    #[serde(default)]
    pub dtype: DType,
}

impl TensorSpec {
    pub fn new(dims: impl Into<Vec<usize>>) -> Self {
        TensorSpec {
            dims: dims.into(),
            dtype: DType::Float32,
        }
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn byte_len(&self) -> usize {
        self.numel() * self.dtype.size_bytes()
    }

    /// Dims with trailing unit axes (beyond the batch and channel axes)
    /// removed. Two specs with equal squeezed dims describe the same
    /// row-major buffer, e.g. `[1, 8, 1, 1]` and `[1, 8]`.
    pub fn squeezed(&self) -> &[usize] {
        let mut end = self.dims.len();
        while end > 2 && self.dims[end - 1] == 1 {
            end -= 1;
        }
        &self.dims[..end]
    }

    /// Checks the structural invariants: non-empty, positive dims.
    pub fn check(&self) -> Result<(), ModelError> {
        if self.dims.is_empty() {
            return Err(ModelError::Validation("tensor has no dimensions".into()));
        }
        if self.dims.contains(&0) {
            return Err(ModelError::Validation(format!(
                "tensor {self} has a zero-sized dimension"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for TensorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

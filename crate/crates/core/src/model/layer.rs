use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ModelError;

/// Operator kinds understood by the toolchain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Op {
    Input,
    Output,
    Conv2D,
    MaxPool2D,
    AvgPool2D,
    GlobalAvgPool2D,
    ReLU,
    Add,
    Concat,
    FullyConnected,
    BatchNorm,
    Softmax,
    Flatten,
}

impl Op {
    pub const ALL: [Op; 13] = [
        Op::Input,
        Op::Output,
        Op::Conv2D,
        Op::MaxPool2D,
        Op::AvgPool2D,
        Op::GlobalAvgPool2D,
        Op::ReLU,
        Op::Add,
        Op::Concat,
        Op::FullyConnected,
        Op::BatchNorm,
        Op::Softmax,
        Op::Flatten,
    ];

    /// Input and Output are pseudo-layers; everything else is "hidden".
    pub fn is_hidden(self) -> bool {
        !matches!(self, Op::Input | Op::Output)
    }

    /// Number of weight tensors the op consumes.
    pub fn weight_count(self) -> usize {
        match self {
            Op::Conv2D | Op::FullyConnected => 2,
            Op::BatchNorm => 4,
            _ => 0,
        }
    }

    fn allowed_attrs(self) -> &'static [&'static str] {
        match self {
            Op::Input => &["shape"],
            Op::Conv2D => &["filters", "kernel", "stride", "padding"],
            Op::MaxPool2D | Op::AvgPool2D => &["kernel", "stride", "padding"],
            Op::Concat | Op::Softmax => &["axis"],
            Op::FullyConnected => &["out_features"],
            Op::BatchNorm => &["epsilon"],
            Op::Output | Op::GlobalAvgPool2D | Op::ReLU | Op::Add | Op::Flatten => &[],
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

pub type Attrs = BTreeMap<String, Value>;

/// One node of the network graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub op: Op,
    #[serde(default)]
    pub attrs: Attrs,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default, rename = "weights")]
    pub weight_refs: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolParams {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Typed view of a layer's attributes.
#[derive(Debug, Clone, PartialEq)]
pub enum OpParams {
    Input { shape: Vec<usize> },
    Output,
    Conv2D(ConvParams),
    MaxPool2D(PoolParams),
    AvgPool2D(PoolParams),
    GlobalAvgPool2D,
    ReLU,
    Add,
    Concat { axis: usize },
    FullyConnected { out_features: usize },
    BatchNorm { epsilon: f32 },
    Softmax { axis: usize },
    Flatten,
}

pub const DEFAULT_BN_EPSILON: f32 = 1e-5;

impl Layer {
    pub fn new(name: impl Into<String>, op: Op) -> Self {
        Layer {
            name: name.into(),
            op,
            attrs: Attrs::new(),
            inputs: Vec::new(),
            weight_refs: Vec::new(),
        }
    }

    pub fn with_inputs<I, S>(mut self, inputs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.inputs = inputs.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_attr(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.attrs.insert(key.to_string(), value.into());
        self
    }

    pub fn with_weights<I, S>(mut self, refs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.weight_refs = refs.into_iter().map(Into::into).collect();
        self
    }

    fn err(&self, msg: impl fmt::Display) -> ModelError {
        ModelError::Validation(format!("layer {} ({}): {msg}", self.name, self.op))
    }

    fn uint(&self, key: &str) -> Result<Option<usize>, ModelError> {
        match self.attrs.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(|x| Some(x as usize))
                .ok_or_else(|| self.err(format!("attribute {key} must be a non-negative integer"))),
        }
    }

    fn required_uint(&self, key: &str) -> Result<usize, ModelError> {
        self.uint(key)?
            .ok_or_else(|| self.err(format!("missing attribute {key}")))
    }

    fn positive(&self, key: &str, v: usize) -> Result<usize, ModelError> {
        if v == 0 {
            Err(self.err(format!("attribute {key} must be positive")))
        } else {
            Ok(v)
        }
    }

    fn pool(&self) -> Result<PoolParams, ModelError> {
        let kernel = self.positive("kernel", self.required_uint("kernel")?)?;
        let stride = self.positive("stride", self.uint("stride")?.unwrap_or(kernel))?;
        let padding = self.uint("padding")?.unwrap_or(0);
        if padding >= kernel {
            return Err(self.err("padding must be smaller than kernel"));
        }
        Ok(PoolParams {
            kernel,
            stride,
            padding,
        })
    }

    /// Parses and checks the attribute map against the op's schema.
    pub fn params(&self) -> Result<OpParams, ModelError> {
        let allowed = self.op.allowed_attrs();
        if let Some(k) = self.attrs.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(self.err(format!("unexpected attribute {k}")));
        }
        Ok(match self.op {
            Op::Input => {
                let raw = self
                    .attrs
                    .get("shape")
                    .and_then(Value::as_array)
                    .ok_or_else(|| self.err("missing array attribute shape"))?;
                let shape = raw
                    .iter()
                    .map(|v| v.as_u64().map(|x| x as usize))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| self.err("shape entries must be integers"))?;
                OpParams::Input { shape }
            }
            Op::Output => OpParams::Output,
            Op::Conv2D => {
                let kernel = self.positive("kernel", self.required_uint("kernel")?)?;
                OpParams::Conv2D(ConvParams {
                    filters: self.positive("filters", self.required_uint("filters")?)?,
                    kernel,
                    stride: self.positive("stride", self.uint("stride")?.unwrap_or(1))?,
                    padding: self.uint("padding")?.unwrap_or(0),
                })
            }
            Op::MaxPool2D => OpParams::MaxPool2D(self.pool()?),
            Op::AvgPool2D => OpParams::AvgPool2D(self.pool()?),
            Op::GlobalAvgPool2D => OpParams::GlobalAvgPool2D,
            Op::ReLU => OpParams::ReLU,
            Op::Add => OpParams::Add,
            Op::Concat => OpParams::Concat {
                axis: self.uint("axis")?.unwrap_or(1),
            },
            Op::FullyConnected => OpParams::FullyConnected {
                out_features: self
                    .positive("out_features", self.required_uint("out_features")?)?,
            },
            Op::BatchNorm => {
                let epsilon = match self.attrs.get("epsilon") {
                    None => DEFAULT_BN_EPSILON,
                    Some(v) => v
                        .as_f64()
                        .filter(|e| e.is_finite() && *e >= 0.0)
                        .ok_or_else(|| self.err("epsilon must be a non-negative number"))?
                        as f32,
                };
                OpParams::BatchNorm { epsilon }
            }
            Op::Softmax => OpParams::Softmax {
                axis: self.uint("axis")?.unwrap_or(1),
            },
            Op::Flatten => OpParams::Flatten,
        })
    }
}

//! Vertical partitioning of a model into sub-models.
//!
//! Every producer/consumer connection whose endpoints land on different
//! ranks is severed and replaced by a named buffer: one output buffer on the
//! producing rank and a same-named input buffer on every consuming rank.
//! A producer feeding several foreign ranks uses a single buffer name.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::model::{Layer, Model, ModelError, Op, TensorSpec, WeightStore};
use crate::specio::{MappingSpec, ResourceKey, SpecError};

#[derive(Debug, thiserror::Error)]
pub enum SplitError {
    #[error("inconsistent mapping: {0}")]
    InconsistentMapping(#[from] SpecError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("sub-model {rank}: {msg}")]
    Invalid { rank: usize, msg: String },
}

/// Identifier of a communication buffer, written `Buff<n>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BufferId(pub u32);

impl fmt::Display for BufferId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Buff{}", self.0)
    }
}

impl FromStr for BufferId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix("Buff")
            .and_then(|n| n.parse().ok())
            .filter(|n: &u32| s.len() == 4 + n.to_string().len())
            .map(BufferId)
            .ok_or_else(|| format!("invalid buffer name {s:?}"))
    }
}

impl Serialize for BufferId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BufferId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A severed producer/consumer connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CutEdge {
    pub src_layer: String,
    pub dst_layer: String,
    pub src_rank: usize,
    pub dst_rank: usize,
    pub buffer: BufferId,
    pub shape: TensorSpec,
}

/// A buffer received from another rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputBuffer {
    pub buffer: BufferId,
    /// Producing layer on the remote rank.
    pub layer: String,
    pub from: usize,
    pub shape: TensorSpec,
}

/// A buffer produced locally and sent to other ranks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputBuffer {
    pub buffer: BufferId,
    pub layer: String,
    pub to: Vec<usize>,
    pub shape: TensorSpec,
}

/// The layers mapped onto one resource, plus their boundary buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct SubModel {
    pub model_name: String,
    pub rank: usize,
    pub key: ResourceKey,
    /// Layers in the original model's topological order. May include the
    /// Input and/or Output pseudo-layers.
    pub layers: Vec<Layer>,
    pub input_buffers: Vec<InputBuffer>,
    pub output_buffers: Vec<OutputBuffer>,
    pub weights: WeightStore,
}

/// On-disk form of a sub-model graph (`submodel.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubModelFile {
    pub name: String,
    pub rank: usize,
    pub key: ResourceKey,
    pub layers: Vec<Layer>,
    pub input_buffers: Vec<InputBuffer>,
    pub output_buffers: Vec<OutputBuffer>,
}

impl SubModel {
    pub fn owns_input(&self) -> bool {
        self.layers.iter().any(|l| l.op == Op::Input)
    }

    pub fn owns_output(&self) -> bool {
        self.layers.iter().any(|l| l.op == Op::Output)
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn input_buffer_for(&self, layer: &str) -> Option<&InputBuffer> {
        self.input_buffers.iter().find(|b| b.layer == layer)
    }

    pub fn output_buffer_for(&self, layer: &str) -> Option<&OutputBuffer> {
        self.output_buffers.iter().find(|b| b.layer == layer)
    }

    /// Bytes held by boundary buffers (received and sent).
    pub fn buffer_bytes(&self) -> usize {
        self.input_buffers.iter().map(|b| b.shape.byte_len()).sum::<usize>()
            + self.output_buffers.iter().map(|b| b.shape.byte_len()).sum::<usize>()
    }

    pub fn to_file(&self) -> SubModelFile {
        SubModelFile {
            name: self.model_name.clone(),
            rank: self.rank,
            key: self.key.clone(),
            layers: self.layers.clone(),
            input_buffers: self.input_buffers.clone(),
            output_buffers: self.output_buffers.clone(),
        }
    }

    pub fn from_file(file: SubModelFile, weights: WeightStore) -> Result<SubModel, SplitError> {
        let sm = SubModel {
            model_name: file.name,
            rank: file.rank,
            key: file.key,
            layers: file.layers,
            input_buffers: file.input_buffers,
            output_buffers: file.output_buffers,
            weights,
        };
        sm.check()?;
        Ok(sm)
    }

    /// Checks the sub-model invariants: every layer input is either a local
    /// layer or a declared input buffer, every output buffer names a local
    /// layer, and the weight store holds exactly the layers' weight refs.
    pub fn check(&self) -> Result<(), SplitError> {
        let invalid = |msg: String| SplitError::Invalid { rank: self.rank, msg };
        let local: BTreeSet<&str> = self.layers.iter().map(|l| l.name.as_str()).collect();
        for l in &self.layers {
            for i in &l.inputs {
                if !local.contains(i.as_str()) && self.input_buffer_for(i).is_none() {
                    return Err(invalid(format!("layer {} reads {i}, which is neither local nor buffered", l.name)));
                }
            }
        }
        for b in &self.output_buffers {
            if !local.contains(b.layer.as_str()) {
                return Err(invalid(format!("output buffer {} names foreign layer {}", b.buffer, b.layer)));
            }
        }
        let refs: Vec<&str> = self
            .layers
            .iter()
            .flat_map(|l| l.weight_refs.iter().map(String::as_str))
            .collect();
        if refs.len() != self.weights.len() || refs.iter().any(|r| !self.weights.contains(r)) {
            return Err(invalid("weight store does not match the layers' weight refs".into()));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<(PathBuf, PathBuf), ModelError> {
        let graph = dir.join("submodel.json");
        let bin = dir.join("submodel.bin");
        let text = serde_json::to_string_pretty(&self.to_file()).expect("submodel serializes");
        fs::write(&graph, text).map_err(|e| ModelError::io(&graph, e))?;
        self.weights.write(&bin)?;
        Ok((graph, bin))
    }

    pub fn load(dir: &Path) -> Result<SubModel, SplitError> {
        let graph = dir.join("submodel.json");
        let text = fs::read_to_string(&graph).map_err(|e| ModelError::io(&graph, e))?;
        let file: SubModelFile = serde_json::from_str(&text)
            .map_err(|e| ModelError::Parse(format!("{}: {e}", graph.display())))?;
        let weights = WeightStore::read(&dir.join("submodel.bin"))?;
        SubModel::from_file(file, weights)
    }
}

/// Every edge whose endpoints lie in different partitions, ordered by the
/// producer's topological position, then consumer name. Buffers are numbered
/// `Buff1, Buff2, ...` per producing layer in that same order.
pub fn cut_edges(model: &Model, mapping: &MappingSpec) -> Vec<CutEdge> {
    let place = mapping.placement(model);
    let mut edges = Vec::new();
    let mut next_id = 1u32;
    for src in model.topo_order() {
        let src_rank = place[src];
        let dsts: BTreeSet<&str> = model
            .consumers(src)
            .filter(|c| place[&c.name] != src_rank)
            .map(|c| c.name.as_str())
            .collect();
        if dsts.is_empty() {
            continue;
        }
        let buffer = BufferId(next_id);
        next_id += 1;
        let shape = model.shape(src).unwrap().clone();
        for dst in dsts {
            edges.push(CutEdge {
                src_layer: src.clone(),
                dst_layer: dst.to_string(),
                src_rank,
                dst_rank: place[dst],
                buffer,
                shape: shape.clone(),
            });
        }
    }
    edges
}

/// Splits `model` into one sub-model per mapping key; rank `i` is the
/// `i`-th key in mapping order.
pub fn split_model(model: &Model, mapping: &MappingSpec) -> Result<Vec<SubModel>, SplitError> {
    mapping.validate_layers(model)?;
    let place = mapping.placement(model);
    let cuts = cut_edges(model, mapping);

    // (rank, buffer) -> port, kept in buffer order
    let mut inputs: BTreeMap<(usize, BufferId), InputBuffer> = BTreeMap::new();
    let mut outputs: BTreeMap<BufferId, OutputBuffer> = BTreeMap::new();
    for e in &cuts {
        inputs.entry((e.dst_rank, e.buffer)).or_insert_with(|| InputBuffer {
            buffer: e.buffer,
            layer: e.src_layer.clone(),
            from: e.src_rank,
            shape: e.shape.clone(),
        });
        let out = outputs.entry(e.buffer).or_insert_with(|| OutputBuffer {
            buffer: e.buffer,
            layer: e.src_layer.clone(),
            to: Vec::new(),
            shape: e.shape.clone(),
        });
        if !out.to.contains(&e.dst_rank) {
            out.to.push(e.dst_rank);
            out.to.sort_unstable();
        }
    }

    let mut by_rank: HashMap<usize, Vec<Layer>> = HashMap::new();
    for name in model.topo_order() {
        by_rank
            .entry(place[name])
            .or_default()
            .push(model.layer(name).unwrap().clone());
    }

    let mut subs = Vec::with_capacity(mapping.len());
    for (rank, a) in mapping.assignments.iter().enumerate() {
        let layers = by_rank.remove(&rank).unwrap_or_default();
        let weights = model
            .weights()
            .subset(layers.iter().flat_map(|l| l.weight_refs.iter().map(String::as_str)))?;
        let sm = SubModel {
            model_name: format!("{}_part{rank}", model.name()),
            rank,
            key: a.key.clone(),
            input_buffers: inputs
                .range((rank, BufferId(0))..=(rank, BufferId(u32::MAX)))
                .map(|(_, b)| b.clone())
                .collect(),
            output_buffers: outputs
                .values()
                .filter(|b| place[&b.layer] == rank)
                .cloned()
                .collect(),
            layers,
            weights,
        };
        sm.check()?;
        subs.push(sm);
    }
    Ok(subs)
}

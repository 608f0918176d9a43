//! Network graph, tensor shapes, weight store and their file formats.
//!
//! A [`Model`] is immutable once built: construction runs every structural
//! check (unique names, single Input/Output, acyclicity, reachability, attr
//! schemas, shape inference, weight resolution) so downstream stages can rely
//! on a consistent graph.

mod graph;
mod layer;
mod tensor;
mod weights;

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use graph::{infer_shapes, output_shape, topo_order};
pub use layer::{Attrs, ConvParams, Layer, Op, OpParams, PoolParams, DEFAULT_BN_EPSILON};
pub use tensor::{DType, TensorSpec};
pub use weights::{WeightEntry, WeightStore, WEIGHTS_MAGIC, WEIGHTS_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("weight mismatch: {0}")]
    WeightMismatch(String),
    #[error("shape error in layer {layer}: {reason}")]
    Shape { layer: String, reason: String },
    #[error("graph has a cycle through {0:?}")]
    Cycle(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ModelError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ModelError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// On-disk graph description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub name: String,
    pub layers: Vec<Layer>,
}

/// A validated, immutable network.
#[derive(Debug, Clone)]
pub struct Model {
    name: String,
    layers: Vec<Layer>,
    index: HashMap<String, usize>,
    topo: Vec<String>,
    shapes: BTreeMap<String, TensorSpec>,
    weights: WeightStore,
}

impl Model {
    pub fn new(name: impl Into<String>, layers: Vec<Layer>, weights: WeightStore) -> Result<Model, ModelError> {
        let name = name.into();
        let mut index = HashMap::with_capacity(layers.len());
        for (i, l) in layers.iter().enumerate() {
            if l.name.is_empty() {
                return Err(ModelError::Validation("layer with empty name".into()));
            }
            if index.insert(l.name.clone(), i).is_some() {
                return Err(ModelError::Validation(format!("duplicate layer name {}", l.name)));
            }
        }

        let of_op = |op: Op| layers.iter().filter(move |l| l.op == op);
        let (n_in, n_out) = (of_op(Op::Input).count(), of_op(Op::Output).count());
        if n_in != 1 || n_out != 1 {
            return Err(ModelError::Validation(format!(
                "model needs exactly one Input and one Output layer, found {n_in} and {n_out}"
            )));
        }
        let output = of_op(Op::Output).next().unwrap();
        if output.inputs.len() != 1 {
            return Err(ModelError::Validation(format!(
                "Output layer {} must have exactly one input",
                output.name
            )));
        }
        if let Some(l) = layers.iter().find(|l| l.inputs.contains(&output.name)) {
            return Err(ModelError::Validation(format!(
                "layer {} consumes the Output layer",
                l.name
            )));
        }

        let topo = topo_order(&layers)?;
        let shapes = infer_shapes(&layers)?;

        let input = of_op(Op::Input).next().unwrap();
        let reached = reachable_from(&layers, &input.name);
        if let Some(l) = layers.iter().find(|l| !reached.contains(l.name.as_str())) {
            return Err(ModelError::Validation(format!(
                "layer {} is not reachable from the Input layer",
                l.name
            )));
        }

        check_weights(&layers, &shapes, &weights)?;

        Ok(Model {
            name,
            layers,
            index,
            topo,
            shapes,
            weights,
        })
    }

    pub fn from_graph(graph: GraphFile, weights: WeightStore) -> Result<Model, ModelError> {
        Model::new(graph.name, graph.layers, weights)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Layers in file order.
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.index.get(name).map(|&i| &self.layers[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Layer names in deterministic topological order.
    pub fn topo_order(&self) -> &[String] {
        &self.topo
    }

    /// Hidden layers (everything but Input/Output) in topological order.
    pub fn hidden_layers(&self) -> impl Iterator<Item = &Layer> {
        self.topo
            .iter()
            .map(|n| self.layer(n).unwrap())
            .filter(|l| l.op.is_hidden())
    }

    pub fn input_layer(&self) -> &Layer {
        self.layers.iter().find(|l| l.op == Op::Input).unwrap()
    }

    pub fn output_layer(&self) -> &Layer {
        self.layers.iter().find(|l| l.op == Op::Output).unwrap()
    }

    pub fn shapes(&self) -> &BTreeMap<String, TensorSpec> {
        &self.shapes
    }

    pub fn shape(&self, layer: &str) -> Option<&TensorSpec> {
        self.shapes.get(layer)
    }

    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    /// Total bytes of the weights referenced by one layer.
    pub fn layer_weight_bytes(&self, layer: &str) -> usize {
        self.layer(layer)
            .map(|l| {
                l.weight_refs
                    .iter()
                    .filter_map(|w| self.weights.get(w))
                    .map(WeightEntry::byte_len)
                    .sum()
            })
            .unwrap_or(0)
    }

    /// Layers that read `name`'s output, in file order.
    pub fn consumers<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Layer> + 'a {
        self.layers
            .iter()
            .filter(move |l| l.inputs.iter().any(|i| i == name))
    }

    pub fn to_graph(&self) -> GraphFile {
        GraphFile {
            name: self.name.clone(),
            layers: self.layers.clone(),
        }
    }

    pub fn graph_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_graph()).expect("graph serializes")
    }

    pub fn save(&self, graph_path: &Path, weights_path: &Path) -> Result<(), ModelError> {
        fs::write(graph_path, self.graph_json()).map_err(|e| ModelError::io(graph_path, e))?;
        self.weights.write(weights_path)
    }
}

pub fn parse_graph(text: &str) -> Result<GraphFile, ModelError> {
    serde_json::from_str(text).map_err(|e| ModelError::Parse(format!("graph file: {e}")))
}

/// Reads and validates a graph JSON file plus its `ADCE` weight file.
pub fn load_model(model_path: &Path, weights_path: &Path) -> Result<Model, ModelError> {
    let text = fs::read_to_string(model_path).map_err(|e| ModelError::io(model_path, e))?;
    let graph = parse_graph(&text)?;
    let weights = WeightStore::read(weights_path)?;
    Model::from_graph(graph, weights)
}

fn reachable_from<'a>(layers: &'a [Layer], root: &'a str) -> HashSet<&'a str> {
    let mut consumers: HashMap<&str, Vec<&str>> = HashMap::new();
    for l in layers {
        for i in &l.inputs {
            consumers.entry(i.as_str()).or_default().push(l.name.as_str());
        }
    }
    let mut seen = HashSet::from([root]);
    let mut queue = VecDeque::from([root]);
    while let Some(n) = queue.pop_front() {
        for &c in consumers.get(n).into_iter().flatten() {
            if seen.insert(c) {
                queue.push_back(c);
            }
        }
    }
    seen
}

/// Expected weight shapes for a layer, given its input shape.
pub fn expected_weight_shapes(layer: &Layer, input: &TensorSpec) -> Result<Vec<TensorSpec>, ModelError> {
    Ok(match layer.params()? {
        OpParams::Conv2D(p) => vec![
            TensorSpec::new([p.filters, input.dims[1], p.kernel, p.kernel]),
            TensorSpec::new([p.filters]),
        ],
        OpParams::FullyConnected { out_features } => vec![
            TensorSpec::new([out_features, input.numel()]),
            TensorSpec::new([out_features]),
        ],
        OpParams::BatchNorm { .. } => {
            if input.rank() < 2 {
                return Err(ModelError::Shape {
                    layer: layer.name.clone(),
                    reason: format!("BatchNorm needs a channel axis, got {input}"),
                });
            }
            vec![TensorSpec::new([input.dims[1]]); 4]
        }
        _ => Vec::new(),
    })
}

fn check_weights(
    layers: &[Layer],
    shapes: &BTreeMap<String, TensorSpec>,
    store: &WeightStore,
) -> Result<(), ModelError> {
    let mut used: HashSet<&str> = HashSet::new();
    for layer in layers {
        let want = layer.op.weight_count();
        if layer.weight_refs.len() != want {
            return Err(ModelError::WeightMismatch(format!(
                "layer {} ({}) needs {want} weight tensors, lists {}",
                layer.name,
                layer.op,
                layer.weight_refs.len()
            )));
        }
        if want == 0 {
            continue;
        }
        let expected = expected_weight_shapes(layer, &shapes[&layer.inputs[0]])?;
        for (wname, spec) in layer.weight_refs.iter().zip(expected) {
            let entry = store.get(wname).ok_or_else(|| {
                ModelError::WeightMismatch(format!("layer {} references missing weight {wname}", layer.name))
            })?;
            if entry.spec.dims != spec.dims {
                return Err(ModelError::WeightMismatch(format!(
                    "weight {wname} of layer {} has shape {}, expected {}",
                    layer.name, entry.spec, spec
                )));
            }
            if !used.insert(wname.as_str()) {
                return Err(ModelError::WeightMismatch(format!(
                    "weight {wname} is referenced by more than one layer"
                )));
            }
        }
    }
    if let Some(extra) = store.names().find(|n| !used.contains(n)) {
        return Err(ModelError::WeightMismatch(format!(
            "weight {extra} is not referenced by any layer"
        )));
    }
    Ok(())
}

//! Reference networks, platforms and mapping generators used by the fixtures,
//! the test suites and the `gen` CLI command.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{expected_weight_shapes, output_shape, Layer, Model, Op, TensorSpec, WeightEntry, WeightStore};
use crate::cost::{LinkCost, Profile};
use crate::specio::{resource_options, Assignment, MappingSpec, OptionPolicy, PlatformSpec, ResourceKey, MAX_CORES};

pub const DIAMOND_PLATFORM: &str = "\
# four edge boards; edge01 carries a GPU
edge01 cpu=ARM slots=0-5 gpu=NVIDIAVolta api=CUDA
edge02 cpu=ARM slots=0-5
edge03 cpu=ARM slots=0-5
edge04 cpu=ARM slots=0-5
";

/// Model 0 = {MaxPool1, Add1} on three cores of edge01, Model 1 = {FC1} on
/// the edge01 GPU, Model 2 = {Conv1, Relu1} on edge04.
pub const DIAMOND_MAPPING: &str = r#"{
  "edge01_arm123": ["MaxPool1", "Add1"],
  "edge01_gpu": ["FC1"],
  "edge04_arm0123": ["Conv1", "Relu1"]
}"#;

/// Builds a model, filling every weight tensor from a seeded generator.
/// BatchNorm variances are drawn positive.
pub struct ModelBuilder {
    name: String,
    layers: Vec<Layer>,
    rng: ChaCha8Rng,
    weights: WeightStore,
    shapes: std::collections::HashMap<String, TensorSpec>,
}

impl ModelBuilder {
    pub fn new(name: &str, seed: u64) -> Self {
        ModelBuilder {
            name: name.to_string(),
            layers: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            weights: WeightStore::new(),
            shapes: Default::default(),
        }
    }

    /// Appends a layer; weight tensors are generated when the op needs them.
    pub fn push(&mut self, mut layer: Layer) -> &mut Self {
        let ins: Vec<&TensorSpec> = layer.inputs.iter().map(|i| &self.shapes[i]).collect();
        let out = output_shape(&layer, &ins).expect("builder layer is well-formed");
        if layer.op.weight_count() > 0 {
            let specs = expected_weight_shapes(&layer, ins[0]).unwrap();
            let suffixes: &[&str] = match layer.op {
                Op::BatchNorm => &["gamma", "beta", "mean", "var"],
                _ => &["weight", "bias"],
            };
            let mut refs = Vec::new();
            for (spec, suffix) in specs.into_iter().zip(suffixes) {
                let name = format!("{}.{suffix}", layer.name);
                let fan_in = if spec.rank() > 1 { spec.numel() / spec.dims[0] } else { 1 };
                let scale = 1.0 / (fan_in as f32).sqrt();
                let data: Vec<f32> = (0..spec.numel())
                    .map(|_| match *suffix {
                        "var" => self.rng.random_range(0.5f32..1.5),
                        "gamma" => self.rng.random_range(0.5f32..1.5),
                        _ => self.rng.random_range(-scale..scale),
                    })
                    .collect();
                self.weights
                    .insert(name.clone(), WeightEntry::new(spec, data).unwrap())
                    .unwrap();
                refs.push(name);
            }
            layer.weight_refs = refs;
        }
        self.shapes.insert(layer.name.clone(), out);
        self.layers.push(layer);
        self
    }

    pub fn build(self) -> Model {
        Model::new(self.name, self.layers, self.weights).expect("builder model validates")
    }
}

fn conv(name: &str, input: &str, filters: usize, kernel: usize, padding: usize) -> Layer {
    Layer::new(name, Op::Conv2D)
        .with_inputs([input])
        .with_attr("filters", filters)
        .with_attr("kernel", kernel)
        .with_attr("padding", padding)
}

fn input(shape: &[usize]) -> Layer {
    Layer::new("Input", Op::Input).with_attr("shape", shape.to_vec())
}

/// The five-hidden-layer example network: Input -> MaxPool1 -> {Conv1, FC1}
/// -> Add1 -> Relu1 -> Output.
pub fn diamond_model() -> Model {
    let mut b = ModelBuilder::new("diamond", 2);
    b.push(input(&[1, 3, 8, 8]))
        .push(
            Layer::new("MaxPool1", Op::MaxPool2D)
                .with_inputs(["Input"])
                .with_attr("kernel", 2)
                .with_attr("stride", 2),
        )
        .push(conv("Conv1", "MaxPool1", 8, 4, 0))
        .push(
            Layer::new("FC1", Op::FullyConnected)
                .with_inputs(["MaxPool1"])
                .with_attr("out_features", 8),
        )
        .push(Layer::new("Add1", Op::Add).with_inputs(["Conv1", "FC1"]))
        .push(Layer::new("Relu1", Op::ReLU).with_inputs(["Add1"]))
        .push(Layer::new("Output", Op::Output).with_inputs(["Relu1"]));
    b.build()
}

/// A small CNN touching every operator family:
/// conv-bn-relu-pool, a residual pair, concat, avg-pool, flatten, fc, softmax.
pub fn toy_cnn(seed: u64) -> Model {
    let mut b = ModelBuilder::new("toy_cnn", seed);
    b.push(input(&[1, 3, 16, 16]))
        .push(conv("conv1", "Input", 8, 3, 1))
        .push(Layer::new("bn1", Op::BatchNorm).with_inputs(["conv1"]))
        .push(Layer::new("relu1", Op::ReLU).with_inputs(["bn1"]))
        .push(
            Layer::new("pool1", Op::MaxPool2D)
                .with_inputs(["relu1"])
                .with_attr("kernel", 2)
                .with_attr("stride", 2),
        )
        .push(conv("conv2a", "pool1", 8, 3, 1))
        .push(conv("conv2b", "pool1", 8, 1, 0))
        .push(Layer::new("add1", Op::Add).with_inputs(["conv2a", "conv2b"]))
        .push(Layer::new("relu2", Op::ReLU).with_inputs(["add1"]))
        .push(Layer::new("cat1", Op::Concat).with_inputs(["relu2", "pool1"]))
        .push(
            Layer::new("avgpool", Op::AvgPool2D)
                .with_inputs(["cat1"])
                .with_attr("kernel", 2)
                .with_attr("stride", 2),
        )
        .push(Layer::new("flat", Op::Flatten).with_inputs(["avgpool"]))
        .push(
            Layer::new("fc1", Op::FullyConnected)
                .with_inputs(["flat"])
                .with_attr("out_features", 10),
        )
        .push(Layer::new("softmax", Op::Softmax).with_inputs(["fc1"]))
        .push(Layer::new("Output", Op::Output).with_inputs(["softmax"]));
    b.build()
}

/// A chain of `n` same-padding 3x3 convolutions over `[1, channels, extent, extent]`.
/// Layers are named `L00`, `L01`, ... so that name order equals chain order.
pub fn conv_chain(n: usize, channels: usize, extent: usize, seed: u64) -> Model {
    let mut b = ModelBuilder::new("conv_chain", seed);
    b.push(input(&[1, channels, extent, extent]));
    let mut prev = "Input".to_string();
    for i in 0..n {
        let name = format!("L{i:02}");
        b.push(conv(&name, &prev, channels, 3, 1));
        prev = name;
    }
    b.push(Layer::new("Output", Op::Output).with_inputs([prev.as_str()]));
    b.build()
}

/// A deep synthetic network of `blocks` conv-bn-relu blocks, used to time the
/// front-end on a large graph. Total layer count is `3 * blocks + 2`.
pub fn synthetic_deep(blocks: usize, channels: usize, extent: usize, seed: u64) -> Model {
    let mut b = ModelBuilder::new("synthetic_deep", seed);
    b.push(input(&[1, channels, extent, extent]));
    let mut prev = "Input".to_string();
    for i in 0..blocks {
        let c = format!("b{i:04}_conv");
        let n = format!("b{i:04}_bn");
        let r = format!("b{i:04}_relu");
        b.push(conv(&c, &prev, channels, 3, 1))
            .push(Layer::new(&n, Op::BatchNorm).with_inputs([c.as_str()]))
            .push(Layer::new(&r, Op::ReLU).with_inputs([n.as_str()]));
        prev = r;
    }
    b.push(Layer::new("Output", Op::Output).with_inputs([prev.as_str()]));
    b.build()
}

/// Deterministic input tensor data for a model's Input layer.
pub fn random_input(model: &Model, seed: u64) -> Vec<f32> {
    let spec = model.shape(&model.input_layer().name).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..spec.numel()).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Platform of `n` identical devices `dev0..`, each with `cores` cores and
/// optionally a GPU.
pub fn uniform_platform(n: usize, cores: u32, gpu: bool) -> PlatformSpec {
    let text: String = (0..n)
        .map(|i| {
            let g = if gpu { " gpu=Volta api=CUDA" } else { "" };
            format!("dev{i} cpu=ARM slots=0-{}{g}\n", cores - 1)
        })
        .collect();
    PlatformSpec::parse(&text).unwrap()
}

/// Random consistent mapping with exactly `ranks` keys drawn from the
/// platform's default resource options. Every key receives at least one
/// hidden layer.
pub fn random_mapping<R: Rng + ?Sized>(
    model: &Model,
    platform: &PlatformSpec,
    ranks: usize,
    rng: &mut R,
) -> MappingSpec {
    let hidden: Vec<&str> = model.hidden_layers().map(|l| l.name.as_str()).collect();
    let mut options: Vec<ResourceKey> = resource_options(platform, OptionPolicy::default());
    assert!(ranks >= 1 && ranks <= hidden.len() && ranks <= options.len());
    options.shuffle(rng);
    options.truncate(ranks);

    // first `ranks` shuffled layers seed one rank each; the rest are random
    let mut slots: Vec<usize> = (0..hidden.len()).collect();
    slots.shuffle(rng);
    let mut owner = vec![0usize; hidden.len()];
    for (i, &layer_idx) in slots.iter().enumerate() {
        owner[layer_idx] = if i < ranks { i } else { rng.random_range(0..ranks) };
    }
    let assignments = options
        .into_iter()
        .enumerate()
        .map(|(r, key)| Assignment {
            key,
            layers: hidden
                .iter()
                .zip(&owner)
                .filter(|(_, &o)| o == r)
                .map(|(n, _)| n.to_string())
                .collect(),
        })
        .collect();
    MappingSpec::new(assignments)
}

/// Splits the hidden layers into `parts` contiguous topological segments,
/// one per resource in `keys`.
pub fn contiguous_mapping(model: &Model, keys: &[ResourceKey]) -> MappingSpec {
    let hidden: Vec<String> = model.hidden_layers().map(|l| l.name.clone()).collect();
    let parts = keys.len();
    assert!(parts >= 1 && parts <= hidden.len());
    let assignments = keys
        .iter()
        .enumerate()
        .map(|(p, key)| {
            let lo = p * hidden.len() / parts;
            let hi = (p + 1) * hidden.len() / parts;
            Assignment {
                key: key.clone(),
                layers: hidden[lo..hi].to_vec(),
            }
        })
        .collect();
    MappingSpec::new(assignments)
}

/// Random valid network with between 3 and `max_hidden` hidden layers.
/// Layers read mostly the newest tensor, sometimes an older one, so graphs
/// branch, merge through Add/Concat and may leave dead-end layers.
pub fn random_model(seed: u64, max_hidden: usize) -> Model {
    assert!(max_hidden >= 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ModelBuilder::new(&format!("rand{seed}"), seed ^ 0x5eed);
    let dims = [1, rng.random_range(1..=4), rng.random_range(4..=9), rng.random_range(4..=9)];
    b.push(input(&dims));
    // (name, dims) of every 4-D tensor produced so far
    let mut maps: Vec<(String, Vec<usize>)> = vec![("Input".into(), dims.to_vec())];
    let body = rng.random_range(1..=max_hidden - 2);
    for i in 0..body {
        let pick = if rng.random_bool(0.7) { maps.len() - 1 } else { rng.random_range(0..maps.len()) };
        let (src, d) = maps[pick].clone();
        let name = format!("n{i:03}");
        let (h, w) = (d[2], d[3]);
        let layer = match rng.random_range(0..8) {
            0 | 1 => {
                let k = if h >= 3 && w >= 3 && rng.random_bool(0.6) { 3 } else { 1 };
                let same = rng.random_bool(0.7);
                conv(&name, &src, rng.random_range(1..=6), k, if same { k / 2 } else { 0 })
            }
            2 => Layer::new(&name, Op::BatchNorm).with_inputs([src.as_str()]),
            3 if h >= 2 && w >= 2 => {
                let op = if rng.random_bool(0.5) { Op::MaxPool2D } else { Op::AvgPool2D };
                Layer::new(&name, op)
                    .with_inputs([src.as_str()])
                    .with_attr("kernel", 2)
                    .with_attr("stride", rng.random_range(1..=2usize))
            }
            4 => match maps.iter().find(|(n, e)| *n != src && *e == d) {
                Some((other, _)) => Layer::new(&name, Op::Add).with_inputs([src.as_str(), other.as_str()]),
                None => Layer::new(&name, Op::ReLU).with_inputs([src.as_str()]),
            },
            5 => {
                let other = maps
                    .iter()
                    .filter(|(_, e)| e[2] == h && e[3] == w)
                    .nth(rng.random_range(0..4))
                    .map_or(src.clone(), |(n, _)| n.clone());
                Layer::new(&name, Op::Concat).with_inputs([src.as_str(), other.as_str()])
            }
            _ => Layer::new(&name, Op::ReLU).with_inputs([src.as_str()]),
        };
        b.push(layer);
        let out = b.shapes[&name].dims.clone();
        maps.push((name, out));
    }
    let last = maps.last().unwrap().0.clone();
    let head = if rng.random_bool(0.5) {
        b.push(Layer::new("gap", Op::GlobalAvgPool2D).with_inputs([last.as_str()]));
        "gap"
    } else {
        b.push(Layer::new("flat", Op::Flatten).with_inputs([last.as_str()]));
        "flat"
    };
    b.push(
        Layer::new("fc", Op::FullyConnected)
            .with_inputs([head])
            .with_attr("out_features", rng.random_range(2..=10usize)),
    );
    let tail = if body + 3 <= max_hidden && rng.random_bool(0.5) {
        b.push(Layer::new("softmax", Op::Softmax).with_inputs(["fc"]).with_attr("axis", 1));
        "softmax"
    } else {
        "fc"
    };
    b.push(Layer::new("Output", Op::Output).with_inputs([tail]));
    b.build()
}

fn random_token<R: Rng + ?Sized>(rng: &mut R, alphabet: &[u8], len: std::ops::RangeInclusive<usize>) -> String {
    let n = rng.random_range(len);
    (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())] as char).collect()
}

/// Random valid platform of 1 to 6 devices.
pub fn random_platform<R: Rng + ?Sized>(rng: &mut R) -> PlatformSpec {
    const LOWER: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    const NAME: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-.";
    const ALNUM: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
    let n = rng.random_range(1..=6);
    let text: String = (0..n)
        .map(|i| {
            let name = format!("{}{i}{}", random_token(rng, LOWER, 1..=1), random_token(rng, NAME, 0..=8));
            let arch = loop {
                let a = random_token(rng, b"ARMXarmx", 1..=6);
                if !a.eq_ignore_ascii_case("gpu") {
                    break a;
                }
            };
            let mut line = format!("{name} cpu={arch} slots=0-{}", rng.random_range(0..MAX_CORES));
            if rng.random_bool(0.4) {
                line += &format!(" gpu={} api={}", random_token(rng, ALNUM, 1..=10), random_token(rng, ALNUM, 1..=6));
            }
            line + "\n"
        })
        .collect();
    PlatformSpec::parse(&text).expect("generated platform parses")
}

/// Random profile covering every hidden layer of `model` on `kinds`, with
/// arbitrary finite non-negative values.
pub fn random_profile<R: Rng + ?Sized>(model: &Model, kinds: &[&str], rng: &mut R) -> Profile {
    let mut p = Profile::uniform(model, kinds, 1.0, 1.0);
    let val = |rng: &mut R| -> f64 {
        match rng.random_range(0..4) {
            0 => 0.0,
            1 => rng.random_range(0.0..1e-3),
            2 => rng.random::<f64>() * 10f64.powi(rng.random_range(-8..8)),
            _ => rng.random_range(0.0..100.0),
        }
    };
    for c in p.layers.values_mut() {
        for v in c.latency_ms.values_mut().chain(c.energy_mj.values_mut()) {
            *v = val(rng);
        }
    }
    p.link = LinkCost {
        bytes_per_ms: rng.random_bool(0.5).then(|| val(rng) + 1.0),
        latency_ms: val(rng),
        energy_mj_per_kb: val(rng),
    };
    p.intra_device = LinkCost {
        bytes_per_ms: rng.random_bool(0.5).then(|| val(rng) + 1.0),
        latency_ms: val(rng),
        energy_mj_per_kb: val(rng),
    };
    p.rank_overhead_bytes = rng.random_range(0..1 << 30);
    p
}

//! Graph utilities: deterministic topological ordering and shape inference.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::layer::{ConvParams, Layer, OpParams, PoolParams};
use super::{ModelError, TensorSpec};

/// Kahn's algorithm with ties broken by ascending layer name.
///
/// Inputs that name unknown layers are reported as validation errors; a
/// residual cycle is reported as [`ModelError::Cycle`].
pub fn topo_order(layers: &[Layer]) -> Result<Vec<String>, ModelError> {
    let index: HashMap<&str, usize> = layers
        .iter()
        .enumerate()
        .map(|(i, l)| (l.name.as_str(), i))
        .collect();
    let mut indegree = vec![0usize; layers.len()];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); layers.len()];
    for (i, layer) in layers.iter().enumerate() {
        // a layer may consume the same producer twice; count distinct edges once
        let distinct: BTreeSet<&str> = layer.inputs.iter().map(String::as_str).collect();
        for src in distinct {
            let &s = index.get(src).ok_or_else(|| {
                ModelError::Validation(format!("layer {} reads unknown layer {src}", layer.name))
            })?;
            indegree[i] += 1;
            consumers[s].push(i);
        }
    }

    let mut ready: BTreeSet<(&str, usize)> = layers
        .iter()
        .enumerate()
        .filter(|(i, _)| indegree[*i] == 0)
        .map(|(i, l)| (l.name.as_str(), i))
        .collect();
    let mut order = Vec::with_capacity(layers.len());
    while let Some((name, i)) = ready.pop_first() {
        order.push(name.to_string());
        for &c in &consumers[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert((layers[c].name.as_str(), c));
            }
        }
    }
    if order.len() != layers.len() {
        let mut stuck: Vec<String> = layers
            .iter()
            .enumerate()
            .filter(|(i, _)| indegree[*i] > 0)
            .map(|(_, l)| l.name.clone())
            .collect();
        stuck.sort();
        return Err(ModelError::Cycle(stuck));
    }
    Ok(order)
}

fn window_out(extent: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = extent + 2 * padding;
    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

fn spatial(
    layer: &Layer,
    input: &TensorSpec,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, usize), ModelError> {
    let [n, c, h, w] = input.dims[..] else {
        return Err(shape_err(layer, format!("expects a 4-D input, got {input}")));
    };
    debug_assert_eq!(n, 1);
    let oh = window_out(h, kernel, stride, padding);
    let ow = window_out(w, kernel, stride, padding);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok((c, oh, ow)),
        _ => Err(shape_err(
            layer,
            format!("kernel {kernel} does not fit input {input} with padding {padding}"),
        )),
    }
}

fn shape_err(layer: &Layer, reason: impl Into<String>) -> ModelError {
    ModelError::Shape {
        layer: layer.name.clone(),
        reason: reason.into(),
    }
}

/// Output shape of one layer given its input shapes.
pub fn output_shape(layer: &Layer, inputs: &[&TensorSpec]) -> Result<TensorSpec, ModelError> {
    let params = layer.params()?;
    let arity_ok = match params {
        OpParams::Input { .. } => inputs.is_empty(),
        OpParams::Add | OpParams::Concat { .. } => inputs.len() >= 2,
        _ => inputs.len() == 1,
    };
    if !arity_ok {
        return Err(shape_err(
            layer,
            format!("{} cannot take {} inputs", layer.op, inputs.len()),
        ));
    }
    let first = inputs.first().copied();
    let spec = match params {
        OpParams::Input { shape } => {
            let spec = TensorSpec::new(shape);
            spec.check().map_err(|e| shape_err(layer, e.to_string()))?;
            spec
        }
        OpParams::Output
        | OpParams::ReLU
        | OpParams::BatchNorm { .. } => first.unwrap().clone(),
        OpParams::Softmax { axis } => {
            let x = first.unwrap();
            if axis == 0 || axis >= x.rank() {
                return Err(shape_err(layer, format!("softmax axis {axis} invalid for {x}")));
            }
            x.clone()
        }
        OpParams::Conv2D(ConvParams {
            filters,
            kernel,
            stride,
            padding,
        }) => {
            let (_, oh, ow) = spatial(layer, first.unwrap(), kernel, stride, padding)?;
            TensorSpec::new([1, filters, oh, ow])
        }
        OpParams::MaxPool2D(PoolParams {
            kernel,
            stride,
            padding,
        })
        | OpParams::AvgPool2D(PoolParams {
            kernel,
            stride,
            padding,
        }) => {
            let (c, oh, ow) = spatial(layer, first.unwrap(), kernel, stride, padding)?;
            TensorSpec::new([1, c, oh, ow])
        }
        OpParams::GlobalAvgPool2D => {
            let x = first.unwrap();
            if x.rank() != 4 {
                return Err(shape_err(layer, format!("expects a 4-D input, got {x}")));
            }
            TensorSpec::new([1, x.dims[1], 1, 1])
        }
        OpParams::Add => {
            let x = first.unwrap();
            if let Some(bad) = inputs.iter().find(|s| s.squeezed() != x.squeezed()) {
                return Err(shape_err(layer, format!("cannot add {x} and {bad}")));
            }
            x.clone()
        }
        OpParams::Concat { axis } => {
            let x = first.unwrap();
            if axis == 0 || axis >= x.rank() {
                return Err(shape_err(layer, format!("concat axis {axis} invalid for {x}")));
            }
            let mut dims = x.dims.clone();
            dims[axis] = 0;
            for s in inputs {
                let same_rest = s.rank() == x.rank()
                    && s.dims.iter().zip(&x.dims).enumerate().all(|(i, (a, b))| i == axis || a == b);
                if !same_rest {
                    return Err(shape_err(layer, format!("cannot concat {x} and {s} on axis {axis}")));
                }
                dims[axis] += s.dims[axis];
            }
            TensorSpec::new(dims)
        }
        OpParams::FullyConnected { out_features } => TensorSpec::new([1, out_features]),
        OpParams::Flatten => {
            let x = first.unwrap();
            TensorSpec::new([1, x.numel()])
        }
    };
    Ok(spec)
}

/// Infers every layer's output shape in topological order.
pub fn infer_shapes(layers: &[Layer]) -> Result<BTreeMap<String, TensorSpec>, ModelError> {
    let order = topo_order(layers)?;
    let by_name: HashMap<&str, &Layer> = layers.iter().map(|l| (l.name.as_str(), l)).collect();
    let mut shapes: BTreeMap<String, TensorSpec> = BTreeMap::new();
    for name in &order {
        let layer = by_name[name.as_str()];
        let ins: Vec<&TensorSpec> = layer.inputs.iter().map(|i| &shapes[i]).collect();
        let out = output_shape(layer, &ins)?;
        if out.dims[0] != 1 {
            return Err(ModelError::Validation(format!(
                "layer {name}: batch size {} is not supported (must be 1)",
                out.dims[0]
            )));
        }
        shapes.insert(name.clone(), out);
    }
    Ok(shapes)
}

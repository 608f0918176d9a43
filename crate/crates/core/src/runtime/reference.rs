use std::collections::HashMap;

use crate::model::{Model, Op};
use crate::scalar::KernelFloat;

use super::{Executor, RuntimeError, Tensor};

/// Single-threaded, single-process evaluation of the whole model in
/// topological order, using the same kernels as the distributed runtime.
pub fn infer_reference<T: KernelFloat>(m: &Model, input: &Tensor<T>) -> Result<Tensor<T>, RuntimeError> {
    let input_layer = m.input_layer();
    let expected = m.shape(&input_layer.name).expect("input shape is inferred");
    if input.spec.dims != expected.dims {
        return Err(RuntimeError::Shape {
            layer: input_layer.name.clone(),
            reason: format!("input is {}, model expects {}", input.spec, expected),
        });
    }
    let exec = Executor::serial();
    let mut values: HashMap<&str, Tensor<T>> = HashMap::new();
    values.insert(input_layer.name.as_str(), input.clone());
    for name in m.topo_order() {
        let layer = m.layer(name).expect("topo order names model layers");
        match layer.op {
            Op::Input => continue,
            Op::Output => return Ok(values.remove(layer.inputs[0].as_str()).expect("output input computed")),
            _ => {
                let inputs: Vec<&Tensor<T>> = layer.inputs.iter().map(|i| &values[i.as_str()]).collect();
                let out = exec.execute_layer(layer, &inputs, m.weights())?;
                values.insert(layer.name.as_str(), out);
            }
        }
    }
    unreachable!("validated models have an Output layer")
}

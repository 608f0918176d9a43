//! Straightforward f64 evaluation of a model, written without the runtime's
//! kernels. Loops run in a different order from the shipped kernels so that
//! agreement is not an artefact of shared summation order.

use std::collections::HashMap;

use edgesplit::model::{Model, OpParams};

#[derive(Debug, Clone)]
pub struct Dense {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Dense {
    fn at4(&self, c: usize, y: usize, x: usize) -> f64 {
        let (h, w) = (self.dims[2], self.dims[3]);
        self.data[(c * h + y) * w + x]
    }
}

fn weight(m: &Model, name: &str) -> Vec<f64> {
    let e = m.weights().get(name).unwrap_or_else(|| panic!("weight {name} missing"));
    e.data.iter().map(|&v| v as f64).collect()
}

/// Input taps of a pooling or convolution window, skipping padding.
fn taps(o: usize, stride: usize, k: usize, pad: usize, len: usize) -> Vec<(usize, usize)> {
    (0..k)
        .filter_map(|kk| {
            let i = (o * stride + kk).checked_sub(pad)?;
            (i < len).then_some((kk, i))
        })
        .collect()
}

fn out_len(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

pub fn infer(m: &Model, input: &[f32]) -> Dense {
    let mut vals: HashMap<String, Dense> = HashMap::new();
    for name in m.topo_order() {
        let layer = m.layer(name).unwrap();
        let ins: Vec<&Dense> = layer.inputs.iter().map(|i| &vals[i]).collect();
        let w = |i: usize| weight(m, &layer.weight_refs[i]);
        let out = match layer.params().unwrap() {
            OpParams::Input { shape } => Dense {
                dims: shape,
                data: input.iter().map(|&v| v as f64).collect(),
            },
            OpParams::Output | OpParams::Flatten => {
                let x = ins[0].clone();
                let dims = if matches!(layer.params().unwrap(), OpParams::Flatten) {
                    vec![1, x.data.len()]
                } else {
                    x.dims
                };
                Dense { dims, data: x.data }
            }
            OpParams::Conv2D(p) => {
                let x = ins[0];
                let (c_in, h, wd) = (x.dims[1], x.dims[2], x.dims[3]);
                let (oh, ow) = (out_len(h, p.kernel, p.stride, p.padding), out_len(wd, p.kernel, p.stride, p.padding));
                let (wt, bias) = (w(0), w(1));
                let k = p.kernel;
                let mut data = vec![0.0; p.filters * oh * ow];
                for f in 0..p.filters {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for &(ky, iy) in taps(oy, p.stride, k, p.padding, h).iter().rev() {
                                for &(kx, ix) in taps(ox, p.stride, k, p.padding, wd).iter().rev() {
                                    for c in (0..c_in).rev() {
                                        acc += x.at4(c, iy, ix) * wt[((f * c_in + c) * k + ky) * k + kx];
                                    }
                                }
                            }
                            data[(f * oh + oy) * ow + ox] = acc + bias[f];
                        }
                    }
                }
                Dense {
                    dims: vec![1, p.filters, oh, ow],
                    data,
                }
            }
            ref op @ (OpParams::MaxPool2D(p) | OpParams::AvgPool2D(p)) => {
                let max = matches!(op, OpParams::MaxPool2D(_));
                let x = ins[0];
                let (c_n, h, wd) = (x.dims[1], x.dims[2], x.dims[3]);
                let (oh, ow) = (out_len(h, p.kernel, p.stride, p.padding), out_len(wd, p.kernel, p.stride, p.padding));
                let mut data = Vec::with_capacity(c_n * oh * ow);
                for c in 0..c_n {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let window: Vec<f64> = taps(oy, p.stride, p.kernel, p.padding, h)
                                .iter()
                                .flat_map(|&(_, iy)| {
                                    taps(ox, p.stride, p.kernel, p.padding, wd)
                                        .into_iter()
                                        .map(move |(_, ix)| (iy, ix))
                                })
                                .map(|(iy, ix)| x.at4(c, iy, ix))
                                .collect();
                            data.push(if max {
                                window.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                            } else {
                                window.iter().rev().sum::<f64>() / window.len().max(1) as f64
                            });
                        }
                    }
                }
                Dense {
                    dims: vec![1, c_n, oh, ow],
                    data,
                }
            }
            OpParams::GlobalAvgPool2D => {
                let x = ins[0];
                let hw = x.dims[2] * x.dims[3];
                let data = x.data.chunks(hw).map(|p| p.iter().rev().sum::<f64>() / hw as f64).collect();
                Dense {
                    dims: vec![1, x.dims[1], 1, 1],
                    data,
                }
            }
            OpParams::ReLU => Dense {
                dims: ins[0].dims.clone(),
                data: ins[0].data.iter().map(|&v| v.max(0.0)).collect(),
            },
            OpParams::Add => Dense {
                dims: ins[0].dims.clone(),
                data: (0..ins[0].data.len()).map(|i| ins.iter().rev().map(|t| t.data[i]).sum()).collect(),
            },
            OpParams::Concat { axis } => {
                let outer: usize = ins[0].dims[..axis].iter().product();
                let mut dims = ins[0].dims.clone();
                dims[axis] = ins.iter().map(|t| t.dims[axis]).sum();
                let mut data = Vec::new();
                for o in 0..outer {
                    for t in &ins {
                        let block: usize = t.dims[axis..].iter().product();
                        data.extend_from_slice(&t.data[o * block..(o + 1) * block]);
                    }
                }
                Dense { dims, data }
            }
            OpParams::FullyConnected { out_features } => {
                let x = &ins[0].data;
                let (wt, bias) = (w(0), w(1));
                let data = (0..out_features)
                    .map(|j| bias[j] + (0..x.len()).rev().map(|i| x[i] * wt[j * x.len() + i]).sum::<f64>())
                    .collect();
                Dense {
                    dims: vec![1, out_features],
                    data,
                }
            }
            OpParams::BatchNorm { epsilon } => {
                let x = ins[0];
                let (gamma, beta, mean, var) = (w(0), w(1), w(2), w(3));
                let plane: usize = x.dims[2..].iter().product();
                let data = x
                    .data
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let c = i / plane;
                        gamma[c] * (v - mean[c]) / (var[c] + epsilon as f64).sqrt() + beta[c]
                    })
                    .collect();
                Dense {
                    dims: x.dims.clone(),
                    data,
                }
            }
            OpParams::Softmax { axis } => {
                let x = ins[0];
                let len = x.dims[axis];
                let inner: usize = x.dims[axis + 1..].iter().product();
                let outer: usize = x.dims[..axis].iter().product();
                let mut data = vec![0.0; x.data.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let sum: f64 = (0..len).rev().map(|j| x.data[idx(j)].exp()).sum();
                        for j in 0..len {
                            data[idx(j)] = x.data[idx(j)].exp() / sum;
                        }
                    }
                }
                Dense {
                    dims: x.dims.clone(),
                    data,
                }
            }
        };
        vals.insert(name.clone(), out);
    }
    vals.remove(&m.output_layer().name).unwrap()
}

/// `max |a - b| / max |b|`.
pub fn rel_error(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(f64::MIN_POSITIVE, |s, v| s.max(v.abs()));
    a.iter().zip(b).map(|(&x, y)| (x as f64 - y).abs()).fold(0.0, f64::max) / scale
}

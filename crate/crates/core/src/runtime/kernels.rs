//! Float operator kernels.
//!
//! Parallel kernels split the outermost output loop (output channel, or
//! output feature for fully-connected layers) across the worker pool. Each
//! output element is always accumulated by one thread in a fixed serial
//! order, so results are bit-identical for any thread count.

use rayon::prelude::*;

use crate::model::{output_shape, ConvParams, Layer, ModelError, OpParams, PoolParams, WeightStore};
use crate::scalar::KernelFloat;

use super::{RuntimeError, Tensor};

/// Worker pool running kernel loop partitions.
pub struct Executor {
    threads: usize,
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("threads", &self.threads).finish()
    }
}

impl Executor {
    pub fn new(threads: usize) -> Result<Executor, RuntimeError> {
        if threads == 0 {
            return Err(RuntimeError::Config("num_threads must be positive".into()));
        }
        let pool = if threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .thread_name(|i| format!("kernel-{i}"))
                    .build()
                    .map_err(|e| RuntimeError::Config(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Executor { threads, pool })
    }

    pub fn serial() -> Executor {
        Executor { threads: 1, pool: None }
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    fn for_each_chunk<T, F>(&self, out: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Send + Sync,
    {
        let chunk = chunk.max(1);
        match &self.pool {
            None => out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
            Some(pool) => pool.install(|| {
                out.par_chunks_mut(chunk)
                    .enumerate()
                    .for_each(|(i, c)| f(i, c))
            }),
        }
    }

    /// Runs one layer on its inputs. `weights` must hold the layer's weight refs.
    pub fn execute_layer<T: KernelFloat>(
        &self,
        layer: &Layer,
        inputs: &[&Tensor<T>],
        weights: &WeightStore,
    ) -> Result<Tensor<T>, RuntimeError> {
        let specs: Vec<_> = inputs.iter().map(|t| &t.spec).collect();
        let out_spec = output_shape(layer, &specs).map_err(|e| shape_error(layer, e))?;
        let params = layer.params().map_err(|e| shape_error(layer, e))?;
        let w = |i: usize| -> Result<&[f32], RuntimeError> {
            let name = layer.weight_refs.get(i).ok_or_else(|| RuntimeError::MissingWeight {
                layer: layer.name.clone(),
                weight: format!("#{i}"),
            })?;
            weights
                .get(name)
                .map(|e| e.data.as_slice())
                .ok_or_else(|| RuntimeError::MissingWeight {
                    layer: layer.name.clone(),
                    weight: name.clone(),
                })
        };
        let mut out = Tensor::zeros(out_spec);
        match params {
            OpParams::Input { .. } => return Err(RuntimeError::UnsupportedOp(format!("{} is an Input layer", layer.name))),
            OpParams::Output | OpParams::Flatten => out.data.copy_from_slice(&inputs[0].data),
            OpParams::Conv2D(p) => self.conv2d(inputs[0], w(0)?, w(1)?, p, &mut out),
            OpParams::MaxPool2D(p) => self.pool2d(inputs[0], p, true, &mut out),
            OpParams::AvgPool2D(p) => self.pool2d(inputs[0], p, false, &mut out),
            OpParams::GlobalAvgPool2D => self.global_avg(inputs[0], &mut out),
            OpParams::ReLU => {
                let x = &inputs[0].data;
                let plane = plane_len(&out.spec.dims);
                self.for_each_chunk(&mut out.data, plane, |c, dst| {
                    let src = &x[c * plane..c * plane + dst.len()];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = if v > T::zero() { v } else { T::zero() };
                    }
                });
            }
            OpParams::Add => {
                let plane = plane_len(&out.spec.dims);
                self.for_each_chunk(&mut out.data, plane, |c, dst| {
                    let base = c * plane;
                    for (j, d) in dst.iter_mut().enumerate() {
                        let mut acc = inputs[0].data[base + j];
                        for t in &inputs[1..] {
                            acc = acc + t.data[base + j];
                        }
                        *d = acc;
                    }
                });
            }
            OpParams::Concat { axis } => concat(inputs, axis, &mut out),
            OpParams::FullyConnected { out_features } => {
                let x = &inputs[0].data;
                let (wt, bias) = (w(0)?, w(1)?);
                let n_in = x.len();
                debug_assert_eq!(out.data.len(), out_features);
                self.for_each_chunk(&mut out.data, 1, |j, dst| {
                    let row = &wt[j * n_in..(j + 1) * n_in];
                    let mut acc = T::zero();
                    for (&xi, &wi) in x.iter().zip(row) {
                        acc = acc + xi * T::widen(wi);
                    }
                    dst[0] = acc + T::widen(bias[j]);
                });
            }
            OpParams::BatchNorm { epsilon } => {
                let x = &inputs[0].data;
                let (gamma, beta, mean, var) = (w(0)?, w(1)?, w(2)?, w(3)?);
                let plane = plane_len(&out.spec.dims);
                let eps = T::widen(epsilon);
                self.for_each_chunk(&mut out.data, plane, |c, dst| {
                    let scale = T::widen(gamma[c]) / (T::widen(var[c]) + eps).sqrt();
                    let (m, b) = (T::widen(mean[c]), T::widen(beta[c]));
                    for (j, d) in dst.iter_mut().enumerate() {
                        *d = (x[c * plane + j] - m) * scale + b;
                    }
                });
            }
            OpParams::Softmax { axis } => softmax(inputs[0], axis, &mut out),
        }
        Ok(out)
    }

    fn conv2d<T: KernelFloat>(&self, x: &Tensor<T>, wt: &[f32], bias: &[f32], p: ConvParams, out: &mut Tensor<T>) {
        let (c_in, h, w) = (x.dims()[1], x.dims()[2], x.dims()[3]);
        let (oh, ow) = (out.dims()[2], out.dims()[3]);
        let (k, s, pad) = (p.kernel, p.stride, p.padding);
        let xd = &x.data;
        self.for_each_chunk(&mut out.data, oh * ow, |o, plane| {
            let wo = &wt[o * c_in * k * k..(o + 1) * c_in * k * k];
            let b = T::widen(bias[o]);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for c in 0..c_in {
                        for ky in 0..k {
                            let iy = oy * s + ky;
                            if iy < pad || iy - pad >= h {
                                continue;
                            }
                            let row = (c * h + iy - pad) * w;
                            for kx in 0..k {
                                let ix = ox * s + kx;
                                if ix < pad || ix - pad >= w {
                                    continue;
                                }
                                acc = acc + xd[row + ix - pad] * T::widen(wo[(c * k + ky) * k + kx]);
                            }
                        }
                    }
                    plane[oy * ow + ox] = acc + b;
                }
            }
        });
    }

    fn pool2d<T: KernelFloat>(&self, x: &Tensor<T>, p: PoolParams, max: bool, out: &mut Tensor<T>) {
        let (h, w) = (x.dims()[2], x.dims()[3]);
        let (oh, ow) = (out.dims()[2], out.dims()[3]);
        let (k, s, pad) = (p.kernel, p.stride, p.padding);
        let xd = &x.data;
        self.for_each_chunk(&mut out.data, oh * ow, |c, plane| {
            let src = &xd[c * h * w..(c + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = if max { T::neg_infinity() } else { T::zero() };
                    let mut count = 0usize;
                    for ky in 0..k {
                        let iy = oy * s + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = ox * s + kx;
                            if ix < pad || ix - pad >= w {
                                continue;
                            }
                            let v = src[(iy - pad) * w + ix - pad];
                            acc = if max { acc.max(v) } else { acc + v };
                            count += 1;
                        }
                    }
                    plane[oy * ow + ox] = if max {
                        acc
                    } else {
                        acc / T::from_usize(count.max(1)).unwrap()
                    };
                }
            }
        });
    }

    fn global_avg<T: KernelFloat>(&self, x: &Tensor<T>, out: &mut Tensor<T>) {
        let hw = x.dims()[2] * x.dims()[3];
        let xd = &x.data;
        let n = T::from_usize(hw).unwrap();
        self.for_each_chunk(&mut out.data, 1, |c, dst| {
            let mut acc = T::zero();
            for &v in &xd[c * hw..(c + 1) * hw] {
                acc = acc + v;
            }
            dst[0] = acc / n;
        });
    }
}

fn shape_error(layer: &Layer, e: ModelError) -> RuntimeError {
    match e {
        ModelError::Shape { layer, reason } => RuntimeError::Shape { layer, reason },
        other => RuntimeError::Shape {
            layer: layer.name.clone(),
            reason: other.to_string(),
        },
    }
}

/// Elements per channel: everything after the channel axis.
fn plane_len(dims: &[usize]) -> usize {
    if dims.len() < 2 {
        dims.iter().product()
    } else {
        dims[2..].iter().product()
    }
}

fn concat<T: KernelFloat>(inputs: &[&Tensor<T>], axis: usize, out: &mut Tensor<T>) {
    let outer: usize = out.dims()[..axis].iter().product();
    let mut pos = 0;
    for o in 0..outer {
        for t in inputs {
            let block: usize = t.dims()[axis..].iter().product();
            out.data[pos..pos + block].copy_from_slice(&t.data[o * block..(o + 1) * block]);
            pos += block;
        }
    }
}

fn softmax<T: KernelFloat>(x: &Tensor<T>, axis: usize, out: &mut Tensor<T>) {
    let dims = x.dims();
    let outer: usize = dims[..axis].iter().product();
    let len = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let mut m = T::neg_infinity();
            for j in 0..len {
                m = m.max(x.data[at(j)]);
            }
            let mut sum = T::zero();
            for j in 0..len {
                let e = (x.data[at(j)] - m).exp();
                out.data[at(j)] = e;
                sum = sum + e;
            }
            for j in 0..len {
                out.data[at(j)] = out.data[at(j)] / sum;
            }
        }
    }
}

/// One-shot convenience: builds a pool of `num_threads` workers and runs the layer.
pub fn execute_layer<T: KernelFloat>(
    layer: &Layer,
    inputs: &[&Tensor<T>],
    weights: &WeightStore,
    num_threads: usize,
) -> Result<Tensor<T>, RuntimeError> {
    Executor::new(num_threads)?.execute_layer(layer, inputs, weights)
}

//! Same-padded 1-D convolutions over frame-major `[T, C]` matrices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MddError, Result};
use crate::tensor::{dot, prefixed, prefixed_mut, Params, Tensor};

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    LeakyRelu,
    Tanh,
    Identity,
}

impl Nonlinearity {
    fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Nonlinearity::LeakyRelu => {
                if pre > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Nonlinearity::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Nonlinearity::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Conv1d {
    /// `[out, kernel * in]`, tap-major within a row.
    weight: Tensor,
    bias: Tensor,
    kernel: usize,
    pool: usize,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Tensor,
    pre: Tensor,
    /// Source frame of every pooled output, `[T_out * out]`; empty when pool = 1.
    argmax: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct ConvCache {
    layers: Vec<LayerCache>,
}

impl ConvCache {
    /// Appends the sign of every pre-activation and every pooling argmax.
    pub fn selection_pattern(&self, out: &mut Vec<usize>) {
        for l in &self.layers {
            out.extend(l.pre.data().iter().map(|&v| usize::from(v > 0.0)));
            out.extend_from_slice(&l.argmax);
        }
    }
}

/// Stack of conv + nonlinearity + max-pool layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack {
    layers: Vec<Conv1d>,
    act: Nonlinearity,
}

impl Conv1d {
    fn in_channels(&self) -> usize {
        self.weight.shape()[1] / self.kernel
    }

    fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn column(&self, input: &Tensor, t: usize, col: &mut [f64]) {
        let (frames, cin) = (input.shape()[0], input.shape()[1]);
        let half = self.kernel / 2;
        for j in 0..self.kernel {
            let src = t as isize + j as isize - half as isize;
            let dst = &mut col[j * cin..(j + 1) * cin];
            if src < 0 || src as usize >= frames {
                dst.iter_mut().for_each(|v| *v = 0.0);
            } else {
                dst.copy_from_slice(input.row(src as usize));
            }
        }
    }
}

impl ConvStack {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        filters: &[usize],
        kernels: &[usize],
        pools: &[usize],
        act: Nonlinearity,
        rng: &mut R,
    ) -> Self {
        let mut cin = in_channels;
        let mut layers = Vec::with_capacity(filters.len());
        for ((&cout, &k), &pool) in filters.iter().zip(kernels).zip(pools) {
            let bound = (6.0 / (cin * k + cout) as f64).sqrt();
            layers.push(Conv1d {
                weight: Tensor::uniform(&[cout, k * cin], bound, rng),
                bias: Tensor::zeros(&[cout]),
                kernel: k,
                pool,
            });
            cin = cout;
        }
        ConvStack { layers, act }
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(|l| l.out_channels())
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ConvCache)> {
        let mut x = input.clone();
        let mut cache = ConvCache::default();
        for layer in &self.layers {
            if x.shape()[1] != layer.in_channels() {
                return Err(MddError::Contract(format!(
                    "conv layer expects {} channels, got {}",
                    layer.in_channels(),
                    x.shape()[1]
                )));
            }
            let frames = x.shape()[0];
            let cout = layer.out_channels();
            let width = layer.weight.shape()[1];
            let mut pre = Tensor::zeros(&[frames, cout]);
            let mut col = vec![0.0; width];
            for t in 0..frames {
                layer.column(&x, t, &mut col);
                let row = pre.row_mut(t);
                for o in 0..cout {
                    row[o] = layer.bias.data()[o]
                        + dot(&layer.weight.data()[o * width..(o + 1) * width], &col);
                }
            }
            let pooled_frames = frames / layer.pool;
            if pooled_frames == 0 {
                return Err(MddError::Input(format!(
                    "{frames} frames cannot be pooled by {}",
                    layer.pool
                )));
            }
            let mut out = Tensor::zeros(&[pooled_frames, cout]);
            let mut argmax = Vec::new();
            if layer.pool == 1 {
                for (o, p) in out.data_mut().iter_mut().zip(pre.data()) {
                    *o = self.act.apply(*p);
                }
            } else {
                argmax.reserve(pooled_frames * cout);
                for tau in 0..pooled_frames {
                    for o in 0..cout {
                        let mut best = (tau * layer.pool, f64::NEG_INFINITY);
                        for t in tau * layer.pool..(tau + 1) * layer.pool {
                            let v = self.act.apply(pre.row(t)[o]);
                            if v > best.1 {
                                best = (t, v);
                            }
                        }
                        out.row_mut(tau)[o] = best.1;
                        argmax.push(best.0);
                    }
                }
            }
            cache.layers.push(LayerCache {
                input: x,
                pre,
                argmax,
            });
            x = out;
        }
        Ok((x, cache))
    }

    /// Returns `d loss / d input` and accumulates weight gradients into `grads`.
    pub fn backward(&self, cache: &ConvCache, dout: &Tensor, grads: &mut ConvStack) -> Result<Tensor> {
        let mut dx = dout.clone();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let lc = &cache.layers[li];
            let frames = lc.pre.shape()[0];
            let cout = layer.out_channels();
            let pooled_frames = frames / layer.pool;
            if dx.shape() != [pooled_frames, cout] {
                return Err(MddError::Contract(format!(
                    "upstream gradient shape {:?}, expected [{pooled_frames}, {cout}]",
                    dx.shape()
                )));
            }
            let mut dpre = Tensor::zeros(&[frames, cout]);
            if layer.pool == 1 {
                for ((d, g), p) in dpre.data_mut().iter_mut().zip(dx.data()).zip(lc.pre.data()) {
                    *d = g * self.act.derivative(*p);
                }
            } else {
                for tau in 0..pooled_frames {
                    for o in 0..cout {
                        let t = lc.argmax[tau * cout + o];
                        let g = dx.row(tau)[o];
                        dpre.row_mut(t)[o] += g * self.act.derivative(lc.pre.row(t)[o]);
                    }
                }
            }
            let cin = layer.in_channels();
            let width = layer.weight.shape()[1];
            let half = layer.kernel / 2;
            let mut din = Tensor::zeros(&[frames, cin]);
            let mut col = vec![0.0; width];
            let mut dcol = vec![0.0; width];
            let g = &mut grads.layers[li];
            for t in 0..frames {
                layer.column(&lc.input, t, &mut col);
                dcol.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..cout {
                    let d = dpre.row(t)[o];
                    if d == 0.0 {
                        continue;
                    }
                    g.bias.data_mut()[o] += d;
                    let wrow = &layer.weight.data()[o * width..(o + 1) * width];
                    let grow = &mut g.weight.data_mut()[o * width..(o + 1) * width];
                    for c in 0..width {
                        grow[c] += d * col[c];
                        dcol[c] += d * wrow[c];
                    }
                }
                for j in 0..layer.kernel {
                    let src = t as isize + j as isize - half as isize;
                    if src < 0 || src as usize >= frames {
                        continue;
                    }
                    let drow = din.row_mut(src as usize);
                    for (a, b) in drow.iter_mut().zip(&dcol[j * cin..(j + 1) * cin]) {
                        *a += b;
                    }
                }
            }
            dx = din;
        }
        Ok(dx)
    }
}

impl Params for ConvStack {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            v.extend(prefixed(
                &format!("layer{i}"),
                vec![("weight".into(), &l.weight), ("bias".into(), &l.bias)],
            ));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            v.extend(prefixed_mut(
                &format!("layer{i}"),
                vec![("weight".into(), &mut l.weight), ("bias".into(), &mut l.bias)],
            ));
        }
        v
    }
}

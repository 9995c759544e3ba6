use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{BiLstm, BiLstmCache};
use crate::error::{MddError, Result};
use crate::frontend::FeatureSequence;
use crate::tensor::{prefixed, prefixed_mut, Params, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Hidden units per direction.
    pub hidden: usize,
    pub layers: usize,
    /// Frame stride applied after the first layer; `S = ceil(T / factor)`.
    pub downsample: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: 32,
            layers: 1,
            downsample: 4,
        }
    }
}

impl EncoderConfig {
    /// The full-scale setting (BiLSTM with 1024 units); far too slow for desk runs.
    pub fn full_scale() -> Self {
        EncoderConfig {
            hidden: 1024,
            layers: 2,
            downsample: 4,
        }
    }

    pub fn output_len(&self, frames: usize) -> usize {
        frames.div_ceil(self.downsample)
    }
}

/// `S x D_enc` encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStates {
    pub states: Tensor,
}

impl EncoderStates {
    pub fn len(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.shape()[1]
    }

    pub fn state(&self, s: usize) -> &[f64] {
        self.states.row(s)
    }
}

/// Stacked BiLSTMs with stride downsampling after the first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub layers: Vec<BiLstm>,
    pub downsample: usize,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    frames: usize,
    layers: Vec<BiLstmCache>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, cfg: &EncoderConfig, scale: f64, rng: &mut R) -> Result<Self> {
        if cfg.layers == 0 || cfg.hidden == 0 || cfg.downsample == 0 {
            return Err(MddError::Config(format!("degenerate encoder config {cfg:?}")));
        }
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut d = input_dim;
        for _ in 0..cfg.layers {
            layers.push(BiLstm::new(d, cfg.hidden, scale, rng));
            d = 2 * cfg.hidden;
        }
        Ok(Encoder {
            layers,
            downsample: cfg.downsample,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, BiLstm::output_dim)
    }

    pub fn forward(&self, feats: &FeatureSequence) -> Result<(EncoderStates, EncoderCache)> {
        let frames = feats.num_frames();
        if frames == 0 {
            return Err(MddError::Input("empty feature sequence".into()));
        }
        let mut x = feats.frames.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, c) = layer.forward(&x)?;
            caches.push(c);
            x = if i == 0 { subsample(&y, self.downsample) } else { y };
        }
        Ok((EncoderStates { states: x }, EncoderCache { frames, layers: caches }))
    }

    /// Returns `d loss / d features`.
    pub fn backward(&self, cache: &EncoderCache, dstates: &Tensor, grads: &mut Encoder) -> Tensor {
        let mut d = dstates.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i == 0 {
                d = upsample_grad(&d, self.downsample, cache.frames);
            }
            d = layer.backward(&cache.layers[i], &d, &mut grads.layers[i]);
        }
        d
    }
}

fn subsample(x: &Tensor, factor: usize) -> Tensor {
    let rows: Vec<usize> = (0..x.shape()[0]).step_by(factor).collect();
    let d = x.shape()[1];
    let mut out = Tensor::zeros(&[rows.len(), d]);
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).copy_from_slice(x.row(r));
    }
    out
}

fn upsample_grad(d: &Tensor, factor: usize, frames: usize) -> Tensor {
    let dim = d.shape()[1];
    let mut out = Tensor::zeros(&[frames, dim]);
    for i in 0..d.shape()[0] {
        out.row_mut(i * factor).copy_from_slice(d.row(i));
    }
    out
}

impl Params for Encoder {
    fn params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| prefixed(&format!("layer{i}"), l.params()).collect::<Vec<_>>())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| prefixed_mut(&format!("layer{i}"), l.params_mut()).collect::<Vec<_>>())
            .collect()
    }
}

//! Location-aware attention: scores see the decoder state, each encoder
//! state, and a convolution of the previous step's attention weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::EncoderStates;
use crate::error::{MddError, Result};
use crate::tensor::{dot, gemv_acc, softmax, Params, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub dim: usize,
    pub conv_channels: usize,
    /// Odd width of the location convolution.
    pub conv_width: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            dim: 32,
            conv_channels: 10,
            conv_width: 11,
        }
    }
}

/// Weights over encoder states and the resulting context vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStep {
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
}

impl AttentionStep {
    /// Uniform weights with no context; the "previous step" before decoding starts.
    pub fn initial(states: usize, dim: usize) -> Self {
        AttentionStep {
            weights: vec![1.0 / states as f64; states],
            context: vec![0.0; dim],
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    prev: Vec<f64>,
    /// `[S, C]` location features.
    loc: Tensor,
    /// `[S, A]` tanh activations.
    act: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationAttention {
    pub query: Tensor,
    pub key: Tensor,
    pub loc_proj: Tensor,
    pub bias: Tensor,
    pub score: Tensor,
    pub loc_conv: Tensor,
}

/// Softmax of raw attention scores.
pub fn attention_weights(scores: &[f64]) -> Vec<f64> {
    softmax(scores)
}

impl LocationAttention {
    pub fn new<R: Rng + ?Sized>(query_dim: usize, enc_dim: usize, cfg: &AttentionConfig, scale: f64, rng: &mut R) -> Result<Self> {
        if cfg.dim == 0 || cfg.conv_channels == 0 || cfg.conv_width.is_multiple_of(2) {
            return Err(MddError::Config(format!("invalid attention config {cfg:?}")));
        }
        let a = cfg.dim;
        Ok(LocationAttention {
            query: Tensor::uniform(&[a, query_dim], scale, rng),
            key: Tensor::uniform(&[a, enc_dim], scale, rng),
            loc_proj: Tensor::uniform(&[a, cfg.conv_channels], scale, rng),
            bias: Tensor::uniform(&[a], scale, rng),
            score: Tensor::uniform(&[a], scale, rng),
            loc_conv: Tensor::uniform(&[cfg.conv_channels, cfg.conv_width], scale, rng),
        })
    }

    fn dim(&self) -> usize {
        self.bias.len()
    }

    fn channels(&self) -> usize {
        self.loc_conv.shape()[0]
    }

    fn width(&self) -> usize {
        self.loc_conv.shape()[1]
    }

    /// `key @ h_s` for every encoder state; shared by all decoding steps.
    pub fn project_keys(&self, enc: &EncoderStates) -> Tensor {
        let mut keys = Tensor::zeros(&[enc.len(), self.dim()]);
        for s in 0..enc.len() {
            gemv_acc(self.key.data(), enc.state(s), keys.row_mut(s));
        }
        keys
    }

    fn location_features(&self, prev: &[f64]) -> Tensor {
        let (c_n, k) = (self.channels(), self.width());
        let half = (k / 2) as isize;
        let mut loc = Tensor::zeros(&[prev.len(), c_n]);
        for s in 0..prev.len() {
            let row = loc.row_mut(s);
            for c in 0..c_n {
                let filt = &self.loc_conv.data()[c * k..(c + 1) * k];
                let mut acc = 0.0;
                for (j, fw) in filt.iter().enumerate() {
                    let src = s as isize + j as isize - half;
                    if src >= 0 && (src as usize) < prev.len() {
                        acc += fw * prev[src as usize];
                    }
                }
                row[c] = acc;
            }
        }
        loc
    }

    pub fn attend(&self, query: &[f64], enc: &EncoderStates, keys: &Tensor, prev: &[f64]) -> Result<(AttentionStep, AttentionCache)> {
        let s_len = enc.len();
        if prev.len() != s_len {
            return Err(MddError::Contract(format!(
                "previous attention has {} weights but there are {s_len} encoder states",
                prev.len()
            )));
        }
        let a = self.dim();
        let mut qproj = self.bias.data().to_vec();
        gemv_acc(self.query.data(), query, &mut qproj);
        let loc = self.location_features(prev);
        let mut act = Tensor::zeros(&[s_len, a]);
        let mut scores = vec![0.0; s_len];
        for s in 0..s_len {
            let row = act.row_mut(s);
            row.copy_from_slice(&qproj);
            for (r, k) in row.iter_mut().zip(keys.row(s)) {
                *r += k;
            }
            gemv_acc(self.loc_proj.data(), loc.row(s), row);
            row.iter_mut().for_each(|v| *v = v.tanh());
            scores[s] = dot(self.score.data(), row);
        }
        let weights = attention_weights(&scores);
        let mut context = vec![0.0; enc.dim()];
        for (s, w) in weights.iter().enumerate() {
            for (c, h) in context.iter_mut().zip(enc.state(s)) {
                *c += w * h;
            }
        }
        Ok((
            AttentionStep { weights, context },
            AttentionCache {
                prev: prev.to_vec(),
                loc,
                act,
            },
        ))
    }

    /// Backward through one attention step. Accumulates into `denc` (encoder
    /// states), `dkeys` (projected keys) and `grads`; returns
    /// `(d query, d previous weights)`.
    #[allow(clippy::too_many_arguments)]
    pub fn attend_backward(
        &self,
        query: &[f64],
        enc: &EncoderStates,
        cache: &AttentionCache,
        step: &AttentionStep,
        dcontext: &[f64],
        dweights: &[f64],
        denc: &mut Tensor,
        dkeys: &mut Tensor,
        grads: &mut LocationAttention,
    ) -> (Vec<f64>, Vec<f64>) {
        let s_len = enc.len();
        let a = self.dim();
        let (c_n, k) = (self.channels(), self.width());
        let half = (k / 2) as isize;
        let w = &step.weights;
        let mut dw = vec![0.0; s_len];
        for s in 0..s_len {
            dw[s] = dot(dcontext, enc.state(s)) + dweights.get(s).copied().unwrap_or(0.0);
            for (d, c) in denc.row_mut(s).iter_mut().zip(dcontext) {
                *d += w[s] * c;
            }
        }
        let mean = dot(w, &dw);
        let mut dq_pre = vec![0.0; a];
        let mut dprev = vec![0.0; s_len];
        let mut dloc = vec![0.0; c_n];
        for s in 0..s_len {
            let de = w[s] * (dw[s] - mean);
            if de == 0.0 {
                continue;
            }
            let act = cache.act.row(s);
            let mut dpre = vec![0.0; a];
            for j in 0..a {
                grads.score.data_mut()[j] += de * act[j];
                dpre[j] = de * self.score.data()[j] * (1.0 - act[j] * act[j]);
            }
            for (q, d) in dq_pre.iter_mut().zip(&dpre) {
                *q += d;
            }
            for (kk, d) in dkeys.row_mut(s).iter_mut().zip(&dpre) {
                *kk += d;
            }
            // loc_proj: [A, C]
            dloc.iter_mut().for_each(|v| *v = 0.0);
            let loc = cache.loc.row(s);
            for j in 0..a {
                let row = &self.loc_proj.data()[j * c_n..(j + 1) * c_n];
                let grow = &mut grads.loc_proj.data_mut()[j * c_n..(j + 1) * c_n];
                for c in 0..c_n {
                    grow[c] += dpre[j] * loc[c];
                    dloc[c] += dpre[j] * row[c];
                }
            }
            for c in 0..c_n {
                for kk in 0..k {
                    let src = s as isize + kk as isize - half;
                    if src >= 0 && (src as usize) < s_len {
                        let src = src as usize;
                        grads.loc_conv.data_mut()[c * k + kk] += dloc[c] * cache.prev[src];
                        dprev[src] += dloc[c] * self.loc_conv.data()[c * k + kk];
                    }
                }
            }
        }
        for (b, d) in grads.bias.data_mut().iter_mut().zip(&dq_pre) {
            *b += d;
        }
        let qd = query.len();
        let mut dquery = vec![0.0; qd];
        for j in 0..a {
            let g = dq_pre[j];
            let row = &self.query.data()[j * qd..(j + 1) * qd];
            let grow = &mut grads.query.data_mut()[j * qd..(j + 1) * qd];
            for i in 0..qd {
                grow[i] += g * query[i];
                dquery[i] += g * row[i];
            }
        }
        (dquery, dprev)
    }

    /// Pushes accumulated key gradients back into the encoder states.
    pub fn keys_backward(&self, enc: &EncoderStates, dkeys: &Tensor, denc: &mut Tensor, grads: &mut LocationAttention) {
        let de = enc.dim();
        for s in 0..enc.len() {
            let h = enc.state(s);
            let dk = dkeys.row(s);
            let drow = denc.row_mut(s);
            for (j, g) in dk.iter().enumerate() {
                if *g == 0.0 {
                    continue;
                }
                let row = &self.key.data()[j * de..(j + 1) * de];
                let grow = &mut grads.key.data_mut()[j * de..(j + 1) * de];
                for i in 0..de {
                    grow[i] += g * h[i];
                    drow[i] += g * row[i];
                }
            }
        }
    }
}

impl Params for LocationAttention {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("query".into(), &self.query),
            ("key".into(), &self.key),
            ("loc_proj".into(), &self.loc_proj),
            ("bias".into(), &self.bias),
            ("score".into(), &self.score),
            ("loc_conv".into(), &self.loc_conv),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("query".into(), &mut self.query),
            ("key".into(), &mut self.key),
            ("loc_proj".into(), &mut self.loc_proj),
            ("bias".into(), &mut self.bias),
            ("score".into(), &mut self.score),
            ("loc_conv".into(), &mut self.loc_conv),
        ]
    }
}

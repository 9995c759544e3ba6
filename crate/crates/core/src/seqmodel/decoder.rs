//! Autoregressive phone decoder: `q_l = LSTM(q_{l-1}, [emb(y_{l-1}); c_{l-1}])`,
//! `p(y_l | ...) = softmax(W [q_l; c_{l-1}] + b)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{LstmCell, LstmStep};
use super::vocab::PhoneVocab;
use crate::error::{MddError, Result};
use crate::tensor::{gemv_acc, gemv_backward, log_softmax_inplace, prefixed, prefixed_mut, Params, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub embed_dim: usize,
    pub hidden: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            embed_dim: 16,
            hidden: 32,
        }
    }
}

/// Recurrent state `q_l` of the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
    pub step: usize,
}

impl DecoderState {
    pub fn zeros(hidden: usize) -> Self {
        DecoderState {
            hidden: vec![0.0; hidden],
            cell: vec![0.0; hidden],
            step: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecoderStepCache {
    embed_row: usize,
    lstm: LstmStep,
    out_in: Vec<f64>,
    pub log_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDecoder {
    pub embed: Tensor,
    pub cell: LstmCell,
    pub out_weight: Tensor,
    pub out_bias: Tensor,
}

impl AttentionDecoder {
    pub fn new<R: Rng + ?Sized>(vocab: &PhoneVocab, enc_dim: usize, cfg: &DecoderConfig, scale: f64, rng: &mut R) -> Result<Self> {
        if cfg.embed_dim == 0 || cfg.hidden == 0 {
            return Err(MddError::Config(format!("degenerate decoder config {cfg:?}")));
        }
        let v = vocab.output_size();
        Ok(AttentionDecoder {
            embed: Tensor::uniform(&[v, cfg.embed_dim], scale, rng),
            cell: LstmCell::new(cfg.embed_dim + enc_dim, cfg.hidden, scale, rng),
            out_weight: Tensor::uniform(&[v, cfg.hidden + enc_dim], scale, rng),
            out_bias: Tensor::uniform(&[v], scale, rng),
        })
    }

    pub fn hidden(&self) -> usize {
        self.cell.hidden()
    }

    /// One decoder step. Returns the advanced state and log-probabilities
    /// over the decoder outputs (phones, then eos).
    pub fn step(&self, vocab: &PhoneVocab, state: &DecoderState, y_prev: usize, context_prev: &[f64]) -> Result<(DecoderState, DecoderStepCache)> {
        let row = vocab.embed_index(y_prev).ok_or_else(|| {
            MddError::Contract(format!(
                "decoder input must be sos or a phone, got {}",
                vocab.symbol(y_prev)
            ))
        })?;
        let mut input = self.embed.row(row).to_vec();
        input.extend_from_slice(context_prev);
        let lstm = self.cell.step(&input, &state.hidden, &state.cell);
        let mut out_in = lstm.h.clone();
        out_in.extend_from_slice(context_prev);
        let mut log_probs = self.out_bias.data().to_vec();
        gemv_acc(self.out_weight.data(), &out_in, &mut log_probs);
        log_softmax_inplace(&mut log_probs);
        let next = DecoderState {
            hidden: lstm.h.clone(),
            cell: lstm.c.clone(),
            step: state.step + 1,
        };
        Ok((
            next,
            DecoderStepCache {
                embed_row: row,
                lstm,
                out_in,
                log_probs,
            },
        ))
    }

    /// Backward through one step given `d loss / d logits`, the gradient
    /// reaching `q_l` from later steps, and the cell-state gradient.
    /// Returns `(d q_{l-1}, d cell_{l-1}, d c_{l-1})`.
    pub fn step_backward(
        &self,
        cache: &DecoderStepCache,
        dlogits: &[f64],
        dhidden: &[f64],
        dcell: &[f64],
        grads: &mut AttentionDecoder,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden();
        let mut dout_in = vec![0.0; cache.out_in.len()];
        gemv_backward(self.out_weight.data(), &cache.out_in, dlogits, grads.out_weight.data_mut(), &mut dout_in);
        for (b, d) in grads.out_bias.data_mut().iter_mut().zip(dlogits) {
            *b += d;
        }
        let dh: Vec<f64> = dout_in[..hd].iter().zip(dhidden).map(|(a, b)| a + b).collect();
        let mut dctx = dout_in[hd..].to_vec();
        let (dinput, dh_prev, dc_prev) = self.cell.step_backward(&cache.lstm, &dh, dcell, &mut grads.cell);
        let e = self.embed.shape()[1];
        for (g, d) in grads.embed.row_mut(cache.embed_row).iter_mut().zip(&dinput[..e]) {
            *g += d;
        }
        for (c, d) in dctx.iter_mut().zip(&dinput[e..]) {
            *c += d;
        }
        (dh_prev, dc_prev, dctx)
    }
}

impl Params for AttentionDecoder {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![("embed".to_string(), &self.embed)];
        v.extend(prefixed("cell", self.cell.params()));
        v.push(("out_weight".into(), &self.out_weight));
        v.push(("out_bias".into(), &self.out_bias));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = vec![("embed".to_string(), &mut self.embed)];
        v.extend(prefixed_mut("cell", self.cell.params_mut()));
        v.push(("out_weight".into(), &mut self.out_weight));
        v.push(("out_bias".into(), &mut self.out_bias));
        v
    }
}

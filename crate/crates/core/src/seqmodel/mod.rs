//! Sequence model: BiLSTM encoder, location-aware attention and the
//! autoregressive phone decoder, assembled into [`AsrModel`].

mod attention;
mod decoder;
mod encoder;
mod lstm;
mod model;
mod vocab;

pub use attention::{attention_weights, AttentionCache, AttentionConfig, AttentionStep, LocationAttention};
pub use decoder::{AttentionDecoder, DecoderConfig, DecoderState, DecoderStepCache};
pub use encoder::{Encoder, EncoderCache, EncoderConfig, EncoderStates};
pub use lstm::{BiLstm, LstmCell, LstmStep};
pub use model::{
    AsrModel, Frontend, FrontendCache, FrontendSpec, LossBreakdown, LossWeights, ModelConfig, PreparedUtterance,
};
pub use vocab::{PhoneVocab, DELETION_MARKER};

use crate::error::Result;
use crate::frontend::FeatureSequence;

/// `H = Encoder(X)` for a bare encoder.
pub fn encode(features: &FeatureSequence, encoder: &Encoder) -> Result<EncoderStates> {
    Ok(encoder.forward(features)?.0)
}

/// Location-aware attention for one query, computing the key projection on the fly.
pub fn attend(
    attention: &LocationAttention,
    query: &DecoderState,
    enc: &EncoderStates,
    prev_weights: &[f64],
) -> Result<AttentionStep> {
    let keys = attention.project_keys(enc);
    Ok(attention.attend(&query.hidden, enc, &keys, prev_weights)?.0)
}

/// One decoder step returning the new state and the output distribution
/// (probabilities over phones then eos).
pub fn decode_step(
    model: &AsrModel,
    q_prev: &DecoderState,
    y_prev: usize,
    c_prev: &[f64],
) -> Result<(DecoderState, Vec<f64>)> {
    let (next, cache) = model.decoder.step(&model.vocab, q_prev, y_prev, c_prev)?;
    Ok((next, cache.log_probs.iter().map(|l| l.exp()).collect()))
}

/// Teacher-forced attention loss `-sum_l log P(y_l | y_<l, X)` over the
/// target followed by eos.
pub fn attention_nll(model: &AsrModel, wave: &crate::frontend::Waveform, target: &[usize]) -> Result<f64> {
    Ok(-model.attention_step_log_probs(wave, target)?.iter().sum::<f64>())
}

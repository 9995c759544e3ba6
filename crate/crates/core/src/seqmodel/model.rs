//! The full recognizer: front-end, shared encoder, CTC head, and attention decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{AttentionCache, AttentionConfig, AttentionStep, LocationAttention};
use super::decoder::{AttentionDecoder, DecoderConfig, DecoderState, DecoderStepCache};
use super::encoder::{Encoder, EncoderCache, EncoderConfig, EncoderStates};
use super::vocab::PhoneVocab;
use crate::ctc::{ctc_loss, LogProbFrame};
use crate::error::{MddError, Result};
use crate::frontend::{
    Cmvn, FbankConfig, FbankExtractor, FeatureSequence, FrontendConfig, SincCache, SincFilterbankParams,
    SincFrontend, Waveform, DEFAULT_SAMPLE_RATE_HZ,
};
use crate::tensor::{gemv_acc, gemv_backward, prefixed, prefixed_mut, Params, Tensor};

/// Which front-end feeds the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrontendSpec {
    Sinc {
        filters: usize,
        kernel_length: usize,
        layout: FrontendConfig,
    },
    Fbank {
        fbank: FbankConfig,
    },
}

impl FrontendSpec {
    pub fn name(&self) -> &'static str {
        match self {
            FrontendSpec::Sinc { .. } => "sinc",
            FrontendSpec::Fbank { .. } => "fbank",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub phones: Vec<String>,
    pub sample_rate_hz: u32,
    pub frontend: FrontendSpec,
    pub encoder: EncoderConfig,
    pub attention: AttentionConfig,
    pub decoder: DecoderConfig,
    /// Recurrent and attention weights start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Small sinc model that trains on one CPU core in minutes.
    pub fn desk_sinc(phones: Vec<String>, seed: u64) -> Self {
        ModelConfig {
            phones,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            frontend: FrontendSpec::Sinc {
                filters: 24,
                kernel_length: 129,
                layout: FrontendConfig {
                    sinc_pool: 160,
                    conv_layer_filters: vec![24, 24],
                    conv_kernel_sizes: vec![3, 3],
                    conv_pools: vec![1, 1],
                    ..FrontendConfig::default()
                },
            },
            encoder: EncoderConfig::default(),
            attention: AttentionConfig::default(),
            decoder: DecoderConfig::default(),
            init_scale: 0.08,
            seed,
        }
    }

    pub fn desk_fbank(phones: Vec<String>, seed: u64) -> Self {
        ModelConfig {
            frontend: FrontendSpec::Fbank {
                fbank: FbankConfig::default(),
            },
            ..ModelConfig::desk_sinc(phones, seed)
        }
    }

    /// A few hundred parameters, for finite-difference checks.
    pub fn tiny_sinc(phones: Vec<String>, seed: u64) -> Self {
        ModelConfig {
            frontend: FrontendSpec::Sinc {
                filters: 3,
                kernel_length: 31,
                layout: FrontendConfig {
                    sinc_pool: 80,
                    conv_layer_filters: vec![3],
                    conv_kernel_sizes: vec![3],
                    conv_pools: vec![1],
                    ..FrontendConfig::default()
                },
            },
            encoder: EncoderConfig {
                hidden: 3,
                layers: 2,
                downsample: 2,
            },
            attention: AttentionConfig {
                dim: 3,
                conv_channels: 2,
                conv_width: 3,
            },
            decoder: DecoderConfig { embed_dim: 2, hidden: 3 },
            ..ModelConfig::desk_sinc(phones, seed)
        }
    }

    pub fn tiny_fbank(phones: Vec<String>, seed: u64) -> Self {
        ModelConfig {
            frontend: FrontendSpec::Fbank {
                fbank: FbankConfig {
                    n_mels: 6,
                    ..FbankConfig::default()
                },
            },
            ..ModelConfig::tiny_sinc(phones, seed)
        }
    }

    /// Layer sizes of the full-scale system: 80 sinc filters of 251 taps,
    /// two 128-filter conv layers of width 3, 1024-unit recurrent layers.
    pub fn full_scale_sinc(phones: Vec<String>, seed: u64) -> Self {
        ModelConfig {
            frontend: FrontendSpec::Sinc {
                filters: SincFilterbankParams::DEFAULT_FILTERS,
                kernel_length: SincFilterbankParams::DEFAULT_KERNEL_LENGTH,
                layout: FrontendConfig::default(),
            },
            encoder: EncoderConfig::full_scale(),
            decoder: DecoderConfig {
                embed_dim: 256,
                hidden: 1024,
            },
            ..ModelConfig::desk_sinc(phones, seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frontend {
    Sinc(SincFrontend),
    Fbank { cfg: FbankConfig, cmvn: Cmvn },
}

#[derive(Debug, Clone)]
pub enum FrontendCache {
    Sinc(SincCache),
    Fbank,
}

impl Frontend {
    pub fn output_dim(&self) -> usize {
        match self {
            Frontend::Sinc(s) => s.output_dim(),
            Frontend::Fbank { cfg, .. } => cfg.n_mels,
        }
    }

    pub fn forward(&self, wave: &Waveform) -> Result<(FeatureSequence, FrontendCache)> {
        match self {
            Frontend::Sinc(s) => {
                let (f, c) = s.forward(wave)?;
                Ok((f, FrontendCache::Sinc(c)))
            }
            Frontend::Fbank { cfg, cmvn } => {
                let raw = FbankExtractor::new(cfg.clone(), wave.sample_rate_hz())?.compute(wave)?;
                Ok((cmvn.apply(&raw), FrontendCache::Fbank))
            }
        }
    }

    fn backward(&self, wave: &Waveform, cache: &FrontendCache, dfeat: &Tensor, grads: &mut Frontend) -> Result<()> {
        match (self, cache, grads) {
            (Frontend::Sinc(s), FrontendCache::Sinc(c), Frontend::Sinc(g)) => s.backward(wave, c, dfeat, g),
            (Frontend::Fbank { .. }, FrontendCache::Fbank, Frontend::Fbank { .. }) => Ok(()),
            _ => Err(MddError::Contract("front-end cache does not match model".into())),
        }
    }
}

impl Params for Frontend {
    fn params(&self) -> Vec<(String, &Tensor)> {
        match self {
            Frontend::Sinc(s) => s.params(),
            Frontend::Fbank { .. } => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            Frontend::Sinc(s) => s.params_mut(),
            Frontend::Fbank { .. } => Vec::new(),
        }
    }
}

/// Relative weights of the two objectives in [`AsrModel::forward_backward`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub ctc: f64,
    pub attention: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// `-log p_CTC(y | X)`; infinite when the target cannot be aligned.
    pub ctc: f64,
    /// `-log p_att(y | X)` including the eos term.
    pub attention: f64,
    pub ctc_feasible: bool,
}

/// Per-utterance tensors reused by every decoding step.
#[derive(Debug, Clone)]
pub struct PreparedUtterance {
    pub encoder: EncoderStates,
    pub keys: Tensor,
    pub ctc: LogProbFrame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsrModel {
    pub config: ModelConfig,
    pub vocab: PhoneVocab,
    pub frontend: Frontend,
    pub encoder: Encoder,
    pub ctc_weight: Tensor,
    pub ctc_bias: Tensor,
    pub attention: LocationAttention,
    pub decoder: AttentionDecoder,
}

struct TeacherForced {
    first: (AttentionStep, AttentionCache),
    /// One entry per emitted symbol (targets then eos).
    steps: Vec<DecoderStepCache>,
    /// Attention computed from each step's state, used by the next step.
    atts: Vec<(Vec<f64>, AttentionStep, AttentionCache)>,
    outputs: Vec<usize>,
    loss: f64,
}

impl AsrModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let vocab = PhoneVocab::new(config.phones.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let frontend = match &config.frontend {
            FrontendSpec::Sinc {
                filters,
                kernel_length,
                layout,
            } => {
                let p = SincFilterbankParams::mel_init(*filters, *kernel_length, config.sample_rate_hz)?;
                Frontend::Sinc(SincFrontend::new(p, layout.clone(), &mut rng)?)
            }
            FrontendSpec::Fbank { fbank } => Frontend::Fbank {
                cfg: fbank.clone(),
                cmvn: Cmvn::identity(fbank.n_mels),
            },
        };
        let scale = config.init_scale;
        let encoder = Encoder::new(frontend.output_dim(), &config.encoder, scale, &mut rng)?;
        let enc_dim = encoder.output_dim();
        let ctc_weight = Tensor::uniform(&[vocab.num_phones() + 1, enc_dim], scale, &mut rng);
        let ctc_bias = Tensor::uniform(&[vocab.num_phones() + 1], scale, &mut rng);
        let attention = LocationAttention::new(config.decoder.hidden, enc_dim, &config.attention, scale, &mut rng)?;
        let decoder = AttentionDecoder::new(&vocab, enc_dim, &config.decoder, scale, &mut rng)?;
        Ok(AsrModel {
            config,
            vocab,
            frontend,
            encoder,
            ctc_weight,
            ctc_bias,
            attention,
            decoder,
        })
    }

    /// Installs normalization statistics for the filterbank front-end.
    pub fn set_cmvn(&mut self, stats: Cmvn) -> Result<()> {
        match &mut self.frontend {
            Frontend::Fbank { cfg, cmvn } if stats.mean.len() == cfg.n_mels && stats.inv_std.len() == cfg.n_mels => {
                *cmvn = stats;
                Ok(())
            }
            Frontend::Fbank { .. } => Err(MddError::Contract("CMVN dimension does not match the filterbank".into())),
            Frontend::Sinc(_) => Err(MddError::Contract("CMVN applies only to the filterbank front-end".into())),
        }
    }

    pub fn frontend_name(&self) -> &'static str {
        self.config.frontend.name()
    }

    pub fn features(&self, wave: &Waveform) -> Result<(FeatureSequence, FrontendCache)> {
        self.frontend.forward(wave)
    }

    pub fn encode(&self, feats: &FeatureSequence) -> Result<(EncoderStates, EncoderCache)> {
        self.encoder.forward(feats)
    }

    pub fn ctc_logits(&self, enc: &EncoderStates) -> Tensor {
        let v = self.ctc_bias.len();
        let mut logits = Tensor::zeros(&[enc.len(), v]);
        for s in 0..enc.len() {
            let row = logits.row_mut(s);
            row.copy_from_slice(self.ctc_bias.data());
            gemv_acc(self.ctc_weight.data(), enc.state(s), row);
        }
        logits
    }

    pub fn prepare(&self, wave: &Waveform) -> Result<PreparedUtterance> {
        let (feats, _) = self.features(wave)?;
        let (enc, _) = self.encode(&feats)?;
        let keys = self.attention.project_keys(&enc);
        let ctc = LogProbFrame::from_logits(&self.ctc_logits(&enc))?;
        Ok(PreparedUtterance {
            encoder: enc,
            keys,
            ctc,
        })
    }

    /// Decoder state and attention before the first output symbol.
    pub fn start(&self, prep: &PreparedUtterance) -> Result<(DecoderState, AttentionStep)> {
        let q0 = DecoderState::zeros(self.decoder.hidden());
        let init = AttentionStep::initial(prep.encoder.len(), prep.encoder.dim());
        let (att, _) = self
            .attention
            .attend(&q0.hidden, &prep.encoder, &prep.keys, &init.weights)?;
        Ok((q0, att))
    }

    /// Feeds `y_prev` and the previous attention, returning log-probabilities
    /// of the next output (phones then eos), the new state, and the attention
    /// computed from it.
    pub fn advance(
        &self,
        prep: &PreparedUtterance,
        state: &DecoderState,
        att: &AttentionStep,
        y_prev: usize,
    ) -> Result<(Vec<f64>, DecoderState, AttentionStep)> {
        let (next, cache) = self.decoder.step(&self.vocab, state, y_prev, &att.context)?;
        let (next_att, _) = self
            .attention
            .attend(&next.hidden, &prep.encoder, &prep.keys, &att.weights)?;
        Ok((cache.log_probs, next, next_att))
    }

    fn check_target(&self, target: &[usize]) -> Result<()> {
        if let Some(&bad) = target.iter().find(|&&s| !self.vocab.is_phone(s)) {
            return Err(MddError::Input(format!(
                "target contains non-phone symbol {}",
                self.vocab.symbol(bad)
            )));
        }
        Ok(())
    }

    fn teacher_forced(&self, enc: &EncoderStates, keys: &Tensor, target: &[usize]) -> Result<TeacherForced> {
        let q0 = DecoderState::zeros(self.decoder.hidden());
        let init = AttentionStep::initial(enc.len(), enc.dim());
        let first = self.attention.attend(&q0.hidden, enc, keys, &init.weights)?;
        let mut state = q0;
        let mut att = first.0.clone();
        let mut steps = Vec::with_capacity(target.len() + 1);
        let mut atts = Vec::with_capacity(target.len());
        let mut outputs = Vec::with_capacity(target.len() + 1);
        let mut loss = 0.0;
        for l in 0..=target.len() {
            let y_in = if l == 0 { self.vocab.sos() } else { target[l - 1] };
            let y_out = if l < target.len() { target[l] } else { self.vocab.eos() };
            let (next, cache) = self.decoder.step(&self.vocab, &state, y_in, &att.context)?;
            let slot = self.vocab.output_index(y_out).expect("validated target");
            loss -= cache.log_probs[slot];
            outputs.push(slot);
            if l < target.len() {
                let (a, ac) = self.attention.attend(&next.hidden, enc, keys, &att.weights)?;
                att = a.clone();
                atts.push((next.hidden.clone(), a, ac));
            }
            steps.push(cache);
            state = next;
        }
        Ok(TeacherForced {
            first,
            steps,
            atts,
            outputs,
            loss,
        })
    }

    /// Teacher-forced attention log-likelihood terms, one per output step
    /// (each target phone, then eos).
    pub fn attention_step_log_probs(&self, wave: &Waveform, target: &[usize]) -> Result<Vec<f64>> {
        self.check_target(target)?;
        let (feats, _) = self.features(wave)?;
        let (enc, _) = self.encode(&feats)?;
        let keys = self.attention.project_keys(&enc);
        let tf = self.teacher_forced(&enc, &keys, target)?;
        Ok(tf
            .steps
            .iter()
            .zip(&tf.outputs)
            .map(|(c, &o)| c.log_probs[o])
            .collect())
    }

    /// Both losses for one utterance; when `grads` is given, accumulates
    /// `weights.ctc * d ctc + weights.attention * d att` into it.
    pub fn forward_backward(
        &self,
        wave: &Waveform,
        target: &[usize],
        weights: LossWeights,
        grads: Option<&mut AsrModel>,
    ) -> Result<LossBreakdown> {
        self.check_target(target)?;
        let (feats, fcache) = self.features(wave)?;
        let (enc, ecache) = self.encode(&feats)?;
        let logits = self.ctc_logits(&enc);
        let lp = LogProbFrame::from_logits(&logits)?;
        let ctc = ctc_loss(&lp, target)?;
        let keys = self.attention.project_keys(&enc);
        let tf = self.teacher_forced(&enc, &keys, target)?;
        let breakdown = LossBreakdown {
            ctc: ctc.loss,
            attention: tf.loss,
            ctc_feasible: ctc.feasible,
        };
        let Some(grads) = grads else {
            return Ok(breakdown);
        };

        let mut denc = Tensor::zeros(enc.states.shape());
        if weights.ctc != 0.0 && ctc.feasible {
            let de = enc.dim();
            let v = self.ctc_bias.len();
            for s in 0..enc.len() {
                let dl: Vec<f64> = ctc.grad_logits.row(s).iter().map(|g| g * weights.ctc).collect();
                gemv_backward(
                    self.ctc_weight.data(),
                    enc.state(s),
                    &dl,
                    grads.ctc_weight.data_mut(),
                    &mut denc.row_mut(s)[..de],
                );
                for (b, d) in grads.ctc_bias.data_mut()[..v].iter_mut().zip(&dl) {
                    *b += d;
                }
            }
        }
        if weights.attention != 0.0 {
            self.attention_backward(&enc, &tf, weights.attention, &mut denc, grads);
        }
        let dfeat = self.encoder.backward(&ecache, &denc, &mut grads.encoder);
        self.frontend.backward(wave, &fcache, &dfeat, &mut grads.frontend)?;
        Ok(breakdown)
    }

    fn attention_backward(&self, enc: &EncoderStates, tf: &TeacherForced, scale: f64, denc: &mut Tensor, grads: &mut AsrModel) {
        let hd = self.decoder.hidden();
        let mut dkeys = Tensor::zeros(&[enc.len(), self.attention.bias.len()]);
        let mut dq_next = vec![0.0; hd];
        let mut dcell_next = vec![0.0; hd];
        let mut dctx_next = vec![0.0; enc.dim()];
        let mut dweights_next = vec![0.0; enc.len()];
        for l in (0..tf.steps.len()).rev() {
            let mut dq = dq_next.clone();
            if l < tf.atts.len() {
                let (query, step, cache) = &tf.atts[l];
                let (dquery, dprev) = self.attention.attend_backward(
                    query,
                    enc,
                    cache,
                    step,
                    &dctx_next,
                    &dweights_next,
                    denc,
                    &mut dkeys,
                    &mut grads.attention,
                );
                for (a, b) in dq.iter_mut().zip(&dquery) {
                    *a += b;
                }
                dweights_next = dprev;
            }
            let cache = &tf.steps[l];
            let mut dlogits: Vec<f64> = cache.log_probs.iter().map(|lp| scale * lp.exp()).collect();
            dlogits[tf.outputs[l]] -= scale;
            let (dh_prev, dc_prev, dctx) = self.decoder.step_backward(cache, &dlogits, &dq, &dcell_next, &mut grads.decoder);
            dq_next = dh_prev;
            dcell_next = dc_prev;
            dctx_next = dctx;
        }
        let (step, cache) = &tf.first;
        let q0 = vec![0.0; hd];
        self.attention.attend_backward(
            &q0,
            enc,
            cache,
            step,
            &dctx_next,
            &dweights_next,
            denc,
            &mut dkeys,
            &mut grads.attention,
        );
        self.attention.keys_backward(enc, &dkeys, denc, &mut grads.attention);
    }
}

impl Params for AsrModel {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v: Vec<(String, &Tensor)> = prefixed("frontend", self.frontend.params()).collect();
        v.extend(prefixed("encoder", self.encoder.params()));
        v.push(("ctc.weight".into(), &self.ctc_weight));
        v.push(("ctc.bias".into(), &self.ctc_bias));
        v.extend(prefixed("attention", self.attention.params()));
        v.extend(prefixed("decoder", self.decoder.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let AsrModel {
            frontend,
            encoder,
            ctc_weight,
            ctc_bias,
            attention,
            decoder,
            ..
        } = self;
        let mut v: Vec<(String, &mut Tensor)> = prefixed_mut("frontend", frontend.params_mut()).collect();
        v.extend(prefixed_mut("encoder", encoder.params_mut()));
        v.push(("ctc.weight".into(), ctc_weight));
        v.push(("ctc.bias".into(), ctc_bias));
        v.extend(prefixed_mut("attention", attention.params_mut()));
        v.extend(prefixed_mut("decoder", decoder.params_mut()));
        v
    }
}

//! Greedy attention decoding and joint CTC/attention beam search.
//!
//! Hypotheses are ranked by `alpha * ctc_prefix + (1 - alpha) * attention`.
//! Ties go to the shorter prefix, then to the lexicographically smaller one.

use std::cmp::Ordering;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ctc::CtcPrefixState;
use crate::error::{MddError, Result};
use crate::exec::Execution;
use crate::frontend::Waveform;
use crate::seqmodel::{AsrModel, AttentionStep, DecoderState, PreparedUtterance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamConfig {
    pub alpha: f64,
    pub beam_width: usize,
    pub max_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            alpha: 0.5,
            beam_width: 4,
            max_len: 50,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(MddError::Config(format!("decode alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.beam_width == 0 || self.max_len == 0 {
            return Err(MddError::Config("beam_width and max_len must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Hypothesis {
    /// Phone ids, without sos/eos.
    pub prefix: Vec<usize>,
    pub attention_score: f64,
    /// CTC prefix score, or the full-sequence score once ended.
    pub ctc_score: f64,
    pub score: f64,
    pub ended: bool,
    pub state: DecoderState,
    attention: AttentionStep,
    ctc_state: CtcPrefixState,
}

/// Total order used everywhere a best hypothesis is chosen: `Less` means `a`
/// ranks ahead of `b`.
pub fn rank(a_score: f64, a_prefix: &[usize], b_score: f64, b_prefix: &[usize]) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then(a_prefix.len().cmp(&b_prefix.len()))
        .then_with(|| a_prefix.cmp(b_prefix))
}

fn by_rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    rank(a.score, &a.prefix, b.score, &b.prefix)
}

fn combined(alpha: f64, ctc: f64, att: f64) -> f64 {
    alpha * ctc + (1.0 - alpha) * att
}

fn check_prepared(prep: &PreparedUtterance) -> Result<()> {
    if prep.encoder.is_empty() {
        return Err(MddError::Input("encoder produced no states".into()));
    }
    Ok(())
}

/// Per-step argmax over phones and eos until eos or `max_len` phones.
pub fn greedy_attention_decode(model: &AsrModel, prep: &PreparedUtterance, max_len: usize) -> Result<Vec<usize>> {
    check_prepared(prep)?;
    let (mut state, mut att) = model.start(prep)?;
    let mut prev = model.vocab.sos();
    let mut out = Vec::new();
    while out.len() < max_len {
        let (lp, next, next_att) = model.advance(prep, &state, &att, prev)?;
        // eos wins ties, matching the beam's preference for shorter prefixes.
        let eos_slot = lp.len() - 1;
        let mut best = eos_slot;
        for (k, &v) in lp[..eos_slot].iter().enumerate() {
            if v > lp[best] {
                best = k;
            }
        }
        let sym = model.vocab.output_symbol(best);
        if sym == model.vocab.eos() {
            break;
        }
        out.push(sym);
        prev = sym;
        state = next;
        att = next_att;
    }
    Ok(out)
}

/// One beam search at a fixed width.
///
/// At each step every live hypothesis is extended by each phone and by eos;
/// the `width` best candidates survive, and ended ones leave the beam.
/// Hypotheses holding `max_len` phones can only end. Search stops once no
/// live hypothesis can outrank the best ended one (both scores only fall
/// under extension).
pub fn beam_search(
    model: &AsrModel,
    prep: &PreparedUtterance,
    alpha: f64,
    width: usize,
    max_len: usize,
) -> Result<Hypothesis> {
    check_prepared(prep)?;
    if width == 0 || max_len == 0 {
        return Err(MddError::Config("beam_width and max_len must be >= 1".into()));
    }
    let vocab = &model.vocab;
    let (state, attention) = model.start(prep)?;
    let mut live = vec![Hypothesis {
        prefix: Vec::new(),
        attention_score: 0.0,
        ctc_score: 0.0,
        score: 0.0,
        ended: false,
        state,
        attention,
        ctc_state: CtcPrefixState::initial(&prep.ctc),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() {
        let mut candidates = Vec::with_capacity(live.len() * (vocab.num_phones() + 1));
        for h in &live {
            let prev = h.prefix.last().copied().unwrap_or(vocab.sos());
            let (lp, next_state, next_att) = model.advance(prep, &h.state, &h.attention, prev)?;
            let eos_slot = vocab.output_index(vocab.eos()).expect("eos has an output slot");
            let att = h.attention_score + lp[eos_slot];
            let ctc = h.ctc_state.full_logprob();
            candidates.push(Hypothesis {
                prefix: h.prefix.clone(),
                attention_score: att,
                ctc_score: ctc,
                score: combined(alpha, ctc, att),
                ended: true,
                state: h.state.clone(),
                attention: h.attention.clone(),
                ctc_state: h.ctc_state.clone(),
            });
            if h.prefix.len() >= max_len {
                continue;
            }
            for p in 1..=vocab.num_phones() {
                let slot = vocab.output_index(p).expect("phones have output slots");
                let att = h.attention_score + lp[slot];
                let ctc_state = h.ctc_state.extend(&prep.ctc, p);
                let ctc = ctc_state.prefix_logprob;
                let mut prefix = h.prefix.clone();
                prefix.push(p);
                candidates.push(Hypothesis {
                    prefix,
                    attention_score: att,
                    ctc_score: ctc,
                    score: combined(alpha, ctc, att),
                    ended: false,
                    state: next_state.clone(),
                    attention: next_att.clone(),
                    ctc_state,
                });
            }
        }
        candidates.sort_by(by_rank);
        candidates.truncate(width);
        live.clear();
        for c in candidates {
            if c.ended {
                finished.push(c);
            } else {
                live.push(c);
            }
        }
        if let (Some(best_done), Some(best_live)) = (finished.iter().min_by(|a, b| by_rank(a, b)), live.first()) {
            if best_done.score >= best_live.score {
                break;
            }
        }
    }
    finished.sort_by(by_rank);
    Ok(finished.into_iter().next().expect("the beam always ends at least one hypothesis"))
}

/// Best hypothesis over beam widths `1..=beam_width`, so a wider beam never
/// returns a lower-scoring result.
pub fn joint_beam_decode(model: &AsrModel, prep: &PreparedUtterance, cfg: &BeamConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let mut best: Option<Hypothesis> = None;
    for w in 1..=cfg.beam_width {
        let h = beam_search(model, prep, cfg.alpha, w, cfg.max_len)?;
        if best.as_ref().is_none_or(|b| by_rank(&h, b) == Ordering::Less) {
            best = Some(h);
        }
    }
    Ok(best.expect("beam_width >= 1"))
}

/// Recognized phone symbols for one waveform.
pub fn decode_wave(model: &AsrModel, wave: &Waveform, cfg: &BeamConfig) -> Result<Vec<String>> {
    let prep = model.prepare(wave)?;
    let h = joint_beam_decode(model, &prep, cfg)?;
    Ok(model.vocab.decode(&h.prefix))
}

/// Decodes many utterances; results keep input order.
pub fn decode_all(
    model: &AsrModel,
    utts: &[(String, Waveform)],
    cfg: &BeamConfig,
    exec: Execution,
) -> Result<Vec<(String, Vec<String>)>> {
    exec.map(utts, |(id, w)| decode_wave(model, w, cfg).map(|p| (id.clone(), p)))
        .into_iter()
        .collect()
}

/// One `utt_id<TAB>phones` line per utterance.
pub fn write_hypotheses<W: Write>(mut w: W, hyps: &[(String, Vec<String>)]) -> std::io::Result<()> {
    for (id, phones) in hyps {
        writeln!(w, "{id}\t{}", phones.join(" "))?;
    }
    Ok(())
}

pub fn parse_hypotheses<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| MddError::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, phones) = line.split_once('\t').unwrap_or((line.as_str(), ""));
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(MddError::format(origin, format!("line {}: bad utterance id", n + 1)));
        }
        out.push((id.to_string(), phones.split_whitespace().map(str::to_string).collect()));
    }
    Ok(out)
}

pub fn read_hypotheses(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let f = std::fs::File::open(path).map_err(|e| MddError::io(path, e))?;
    parse_hypotheses(std::io::BufReader::new(f), path)
}

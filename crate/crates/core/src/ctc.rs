//! Connectionist temporal classification: log-domain forward-backward loss,
//! greedy decoding, prefix scoring for joint decoding, and a brute-force
//! enumeration oracle.
//!
//! Label 0 is the blank everywhere in this crate.

use crate::error::{MddError, Result};
use crate::exec::Execution;
use crate::tensor::{log_softmax_inplace, Tensor};

pub const BLANK: usize = 0;

/// Stand-in for `log(0)`. Arithmetic on it stays hugely negative and
/// `exp` of it is exactly zero; anything below [`LOG_ZERO_THRESHOLD`] is
/// treated as impossible.
pub const LOG_ZERO: f64 = -1e30;
pub const LOG_ZERO_THRESHOLD: f64 = LOG_ZERO / 2.0;

/// `log(exp(a) + exp(b))` with [`LOG_ZERO`] as the absorbing zero.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if hi < LOG_ZERO_THRESHOLD {
        return LOG_ZERO;
    }
    if lo < LOG_ZERO_THRESHOLD {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let hi = xs.iter().cloned().fold(LOG_ZERO, f64::max);
    if hi < LOG_ZERO_THRESHOLD {
        return LOG_ZERO;
    }
    hi + xs
        .iter()
        .filter(|&&x| x >= LOG_ZERO_THRESHOLD)
        .map(|x| (x - hi).exp())
        .sum::<f64>()
        .ln()
}

/// `T x V` per-frame log-probabilities over `{blank} ∪ phones`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbFrame {
    data: Tensor,
}

impl LogProbFrame {
    /// Validates that each row is a log-distribution (log-sum-exp within 1e-6 of 0).
    pub fn new(data: Tensor) -> Result<Self> {
        if data.shape().len() != 2 || data.shape()[0] == 0 || data.shape()[1] < 2 {
            return Err(MddError::Input(format!(
                "log-probabilities must be T x V with T >= 1, V >= 2; got {:?}",
                data.shape()
            )));
        }
        let mut data = data;
        for v in data.data_mut() {
            if v.is_nan() || *v > 1e-9 {
                return Err(MddError::Input(format!("invalid log-probability {v}")));
            }
            *v = v.max(LOG_ZERO);
        }
        for t in 0..data.shape()[0] {
            let z = log_sum_exp(data.row(t));
            if z.abs() > 1e-6 {
                return Err(MddError::Input(format!(
                    "frame {t} log-sum-exps to {z}, not 0"
                )));
            }
        }
        Ok(LogProbFrame { data })
    }

    /// Row-wise log-softmax of unnormalized logits.
    pub fn from_logits(logits: &Tensor) -> Result<Self> {
        let mut data = logits.clone();
        let v = data.shape()[1];
        for row in data.data_mut().chunks_mut(v) {
            log_softmax_inplace(row);
        }
        LogProbFrame::new(data)
    }

    pub fn num_frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn vocab_size(&self) -> usize {
        self.data.shape()[1]
    }

    #[inline]
    pub fn at(&self, t: usize, k: usize) -> f64 {
        self.data.row(t)[k]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.data.row(t)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }
}

fn check_target(lp: &LogProbFrame, target: &[usize]) -> Result<()> {
    for &s in target {
        if s == BLANK || s >= lp.vocab_size() {
            return Err(MddError::Input(format!(
                "target symbol {s} is not a phone index in 1..{}",
                lp.vocab_size()
            )));
        }
    }
    Ok(())
}

/// Minimum number of frames needed to emit `target`.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Forward/backward lattice over the blank-interleaved target.
///
/// `log_beta[t][s]` excludes the emission at `t`, so
/// `log_alpha[t][s] + log_beta[t][s]` is the log-mass of paths through
/// state `s` at frame `t`.
#[derive(Debug, Clone)]
pub struct CtcTrellis {
    pub extended: Vec<usize>,
    pub log_alpha: Tensor,
    pub log_beta: Tensor,
}

impl CtcTrellis {
    pub fn build(lp: &LogProbFrame, target: &[usize]) -> Result<Self> {
        check_target(lp, target)?;
        let mut extended = Vec::with_capacity(2 * target.len() + 1);
        extended.push(BLANK);
        for &s in target {
            extended.push(s);
            extended.push(BLANK);
        }
        let t_len = lp.num_frames();
        let s_len = extended.len();
        let skip = |s: usize| s >= 2 && extended[s] != BLANK && extended[s] != extended[s - 2];

        let mut alpha = Tensor::from_vec(&[t_len, s_len], vec![LOG_ZERO; t_len * s_len]);
        alpha.row_mut(0)[0] = lp.at(0, BLANK);
        if s_len > 1 {
            alpha.row_mut(0)[1] = lp.at(0, extended[1]);
        }
        for t in 1..t_len {
            for s in 0..s_len {
                let prev = alpha.row(t - 1);
                let mut acc = prev[s];
                if s >= 1 {
                    acc = log_add(acc, prev[s - 1]);
                }
                if skip(s) {
                    acc = log_add(acc, prev[s - 2]);
                }
                alpha.row_mut(t)[s] = if acc < LOG_ZERO_THRESHOLD {
                    LOG_ZERO
                } else {
                    acc + lp.at(t, extended[s])
                };
            }
        }

        let mut beta = Tensor::from_vec(&[t_len, s_len], vec![LOG_ZERO; t_len * s_len]);
        beta.row_mut(t_len - 1)[s_len - 1] = 0.0;
        if s_len > 1 {
            beta.row_mut(t_len - 1)[s_len - 2] = 0.0;
        }
        for t in (0..t_len - 1).rev() {
            for s in 0..s_len {
                let next = beta.row(t + 1);
                let emit = |s2: usize| {
                    if next[s2] < LOG_ZERO_THRESHOLD {
                        LOG_ZERO
                    } else {
                        next[s2] + lp.at(t + 1, extended[s2])
                    }
                };
                let mut acc = emit(s);
                if s + 1 < s_len {
                    acc = log_add(acc, emit(s + 1));
                }
                if s + 2 < s_len && skip(s + 2) {
                    acc = log_add(acc, emit(s + 2));
                }
                beta.row_mut(t)[s] = acc;
            }
        }
        Ok(CtcTrellis {
            extended,
            log_alpha: alpha,
            log_beta: beta,
        })
    }

    /// `log p(target)` from the alpha termination.
    pub fn forward_log_likelihood(&self) -> f64 {
        let t = self.log_alpha.shape()[0] - 1;
        let s = self.extended.len();
        let row = self.log_alpha.row(t);
        if s > 1 {
            log_add(row[s - 1], row[s - 2])
        } else {
            row[0]
        }
    }

    /// `log p(target)` from the beta initialization.
    pub fn backward_log_likelihood(&self, lp: &LogProbFrame) -> f64 {
        let b = self.log_beta.row(0);
        let mut acc = lp.at(0, self.extended[0]) + b[0];
        if self.extended.len() > 1 {
            acc = log_add(acc, lp.at(0, self.extended[1]) + b[1]);
        }
        if acc < LOG_ZERO_THRESHOLD {
            LOG_ZERO
        } else {
            acc
        }
    }
}

#[derive(Debug, Clone)]
pub struct CtcOutput {
    /// `-log p_CTC(target | X)`; `+inf` when the target cannot be aligned.
    pub loss: f64,
    /// Gradient of `loss` with respect to the logits that produced the
    /// log-probabilities (through log-softmax). Zero when infeasible.
    pub grad_logits: Tensor,
    pub feasible: bool,
}

/// CTC negative log-likelihood and its gradient.
pub fn ctc_loss(lp: &LogProbFrame, target: &[usize]) -> Result<CtcOutput> {
    check_target(lp, target)?;
    let (t_len, v) = (lp.num_frames(), lp.vocab_size());
    if min_frames(target) > t_len {
        return Ok(CtcOutput {
            loss: f64::INFINITY,
            grad_logits: Tensor::zeros(&[t_len, v]),
            feasible: false,
        });
    }
    let trellis = CtcTrellis::build(lp, target)?;
    let ll = trellis.forward_log_likelihood();
    if ll < LOG_ZERO_THRESHOLD {
        return Ok(CtcOutput {
            loss: f64::INFINITY,
            grad_logits: Tensor::zeros(&[t_len, v]),
            feasible: false,
        });
    }
    let mut grad = Tensor::zeros(&[t_len, v]);
    for t in 0..t_len {
        let g = grad.row_mut(t);
        for (k, gk) in g.iter_mut().enumerate() {
            *gk = lp.at(t, k).exp();
        }
        let a = trellis.log_alpha.row(t);
        let b = trellis.log_beta.row(t);
        for (s, &sym) in trellis.extended.iter().enumerate() {
            let occ = a[s] + b[s];
            if occ >= LOG_ZERO_THRESHOLD {
                g[sym] -= (occ - ll).exp();
            }
        }
    }
    Ok(CtcOutput {
        loss: -ll,
        grad_logits: grad,
        feasible: true,
    })
}

/// Merge repeats, then drop blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != BLANK {
            out.push(s);
        }
        prev = Some(s);
    }
    out
}

/// Enumeration limits for [`ctc_brute_force`].
pub const BRUTE_FORCE_MAX_FRAMES: usize = 8;
pub const BRUTE_FORCE_MAX_PHONES: usize = 4;

/// `-log p(target)` by summing over every frame-label path. Only for tiny
/// problems; serves as the oracle for [`ctc_loss`].
pub fn ctc_brute_force(lp: &LogProbFrame, target: &[usize]) -> Result<f64> {
    check_target(lp, target)?;
    let (t_len, v) = (lp.num_frames(), lp.vocab_size());
    if t_len > BRUTE_FORCE_MAX_FRAMES || v - 1 > BRUTE_FORCE_MAX_PHONES {
        return Err(MddError::Refused(format!(
            "enumeration bound exceeded: T = {t_len} (max {BRUTE_FORCE_MAX_FRAMES}), \
             |U| = {} (max {BRUTE_FORCE_MAX_PHONES})",
            v - 1
        )));
    }
    // Split the path space on the first label so the enumeration is data-parallel.
    let partial = Execution::default().map_range(v, |first| {
        let rest = v.pow((t_len - 1) as u32);
        let mut path = vec![0usize; t_len];
        let mut total = 0.0;
        for code in 0..rest {
            path[0] = first;
            let mut c = code;
            for slot in path.iter_mut().skip(1) {
                *slot = c % v;
                c /= v;
            }
            if collapse(&path) == target {
                let lp_sum: f64 = path.iter().enumerate().map(|(t, &k)| lp.at(t, k)).sum();
                total += lp_sum.exp();
            }
        }
        total
    });
    let p: f64 = partial.iter().sum();
    Ok(if p > 0.0 { -p.ln() } else { f64::INFINITY })
}

/// Per-frame argmax (lowest index on ties), collapsed.
pub fn ctc_greedy_decode(lp: &LogProbFrame) -> Vec<usize> {
    let path: Vec<usize> = (0..lp.num_frames())
        .map(|t| {
            let row = lp.frame(t);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    collapse(&path)
}

/// Incremental CTC prefix scores for one hypothesis prefix.
///
/// `r_n[t]` / `r_b[t]` are the log-probabilities that frames `0..=t`
/// collapse to the prefix with the last frame a non-blank / blank.
#[derive(Debug, Clone)]
pub struct CtcPrefixState {
    r_n: Vec<f64>,
    r_b: Vec<f64>,
    last: Option<usize>,
    /// `log` of the total probability of label sequences starting with the prefix.
    pub prefix_logprob: f64,
}

impl CtcPrefixState {
    /// State of the empty prefix.
    pub fn initial(lp: &LogProbFrame) -> Self {
        let mut r_b = Vec::with_capacity(lp.num_frames());
        let mut acc = 0.0;
        for t in 0..lp.num_frames() {
            acc += lp.at(t, BLANK);
            r_b.push(acc.max(LOG_ZERO));
        }
        CtcPrefixState {
            r_n: vec![LOG_ZERO; lp.num_frames()],
            r_b,
            last: None,
            prefix_logprob: 0.0,
        }
    }

    /// State for the prefix extended by phone `c`.
    pub fn extend(&self, lp: &LogProbFrame, c: usize) -> Self {
        let t_len = lp.num_frames();
        // Probability mass that has emitted the current prefix by frame t and
        // may start `c` at frame t + 1.
        let phi = |t: usize| {
            if Some(c) == self.last {
                self.r_b[t]
            } else {
                log_add(self.r_b[t], self.r_n[t])
            }
        };
        let mut r_n = vec![LOG_ZERO; t_len];
        let mut r_b = vec![LOG_ZERO; t_len];
        let mut psi = if self.last.is_none() { lp.at(0, c) } else { LOG_ZERO };
        r_n[0] = psi;
        for t in 1..t_len {
            let start = phi(t - 1);
            let emit_c = lp.at(t, c);
            r_n[t] = add_emission(log_add(r_n[t - 1], start), emit_c);
            r_b[t] = add_emission(log_add(r_b[t - 1], r_n[t - 1]), lp.at(t, BLANK));
            psi = log_add(psi, add_emission(start, emit_c));
        }
        CtcPrefixState {
            r_n,
            r_b,
            last: Some(c),
            prefix_logprob: psi,
        }
    }

    /// `log p_CTC(prefix | X)` treating the prefix as a complete sequence.
    pub fn full_logprob(&self) -> f64 {
        let t = self.r_n.len() - 1;
        log_add(self.r_n[t], self.r_b[t])
    }
}

#[inline]
fn add_emission(acc: f64, emit: f64) -> f64 {
    if acc < LOG_ZERO_THRESHOLD {
        LOG_ZERO
    } else {
        (acc + emit).max(LOG_ZERO)
    }
}

/// `log` of the probability mass of all label sequences that begin with `prefix`.
pub fn ctc_prefix_logprob(lp: &LogProbFrame, prefix: &[usize]) -> Result<f64> {
    check_target(lp, prefix)?;
    let mut st = CtcPrefixState::initial(lp);
    for &c in prefix {
        st = st.extend(lp, c);
    }
    Ok(st.prefix_logprob)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_frame_example() -> LogProbFrame {
        let p = [[0.4, 0.6], [0.5, 0.5]];
        let data = p.iter().flatten().map(|x: &f64| x.ln()).collect();
        LogProbFrame::new(Tensor::from_vec(&[2, 2], data)).unwrap()
    }

    #[test]
    fn single_frame_single_label() {
        let lp = LogProbFrame::new(Tensor::from_vec(&[1, 3], vec![0.2f64.ln(), 0.5f64.ln(), 0.3f64.ln()])).unwrap();
        let out = ctc_loss(&lp, &[1]).unwrap();
        assert!((out.loss + 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_frame_enumeration() {
        let lp = two_frame_example();
        let out = ctc_loss(&lp, &[1]).unwrap();
        assert!((out.loss - (-(0.8f64).ln())).abs() < 1e-12);
        assert!((out.loss - 0.22314).abs() < 1e-5);
        assert!((ctc_brute_force(&lp, &[1]).unwrap() - out.loss).abs() < 1e-8);
    }

    #[test]
    fn repeated_label_needs_separator() {
        let lp = two_frame_example();
        let out = ctc_loss(&lp, &[1, 1]).unwrap();
        assert!(out.loss.is_infinite() && !out.feasible);
        assert!(out.grad_logits.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn empty_target_is_all_blank_path() {
        let lp = two_frame_example();
        let bf = ctc_brute_force(&lp, &[]).unwrap();
        assert!((bf + (0.4f64 * 0.5).ln()).abs() < 1e-12);
        assert!((ctc_loss(&lp, &[]).unwrap().loss - bf).abs() < 1e-12);
    }

    #[test]
    fn uniform_single_frame_oracle() {
        let lp = LogProbFrame::new(Tensor::from_vec(&[1, 2], vec![0.5f64.ln(); 2])).unwrap();
        let p = (-ctc_brute_force(&lp, &[1]).unwrap()).exp();
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn brute_force_refuses_large_problems() {
        let lp = LogProbFrame::from_logits(&Tensor::zeros(&[9, 3])).unwrap();
        assert!(matches!(ctc_brute_force(&lp, &[1]), Err(MddError::Refused(_))));
    }

    #[test]
    fn blank_in_target_is_rejected() {
        let lp = two_frame_example();
        assert!(matches!(ctc_loss(&lp, &[0]), Err(MddError::Input(_))));
    }

    #[test]
    fn greedy_collapse_rules() {
        assert_eq!(collapse(&[1, 1, 0, 2]), vec![1, 2]);
        assert_eq!(collapse(&[0, 0, 0]), Vec::<usize>::new());
        assert_eq!(collapse(&[1, 0, 1]), vec![1, 1]);
    }

    #[test]
    fn prefix_scores() {
        let lp = two_frame_example();
        assert_eq!(ctc_prefix_logprob(&lp, &[]).unwrap(), 0.0);
        let a = ctc_prefix_logprob(&lp, &[1]).unwrap();
        assert!((a - 0.8f64.ln()).abs() < 1e-12);
        let lp1 = LogProbFrame::new(Tensor::from_vec(&[1, 2], vec![0.3f64.ln(), 0.7f64.ln()])).unwrap();
        assert!((ctc_prefix_logprob(&lp1, &[1]).unwrap() - 0.7f64.ln()).abs() < 1e-12);
    }
}

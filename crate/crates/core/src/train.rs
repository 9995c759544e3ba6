//! Joint CTC/attention objective, SGD training, checkpoints and the
//! finite-difference gradient checker.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MddError, Result};
use crate::exec::Execution;
use crate::frontend::{Cmvn, FbankExtractor, Waveform};
use crate::seqmodel::{AsrModel, Frontend, LossWeights, ModelConfig};
use crate::tensor::{global_norm, zeros_like, Params, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrontendKind {
    Sinc,
    Fbank,
}

impl FrontendKind {
    pub fn name(self) -> &'static str {
        match self {
            FrontendKind::Sinc => "sinc",
            FrontendKind::Fbank => "fbank",
        }
    }

    /// The desk-scale model preset for this front-end.
    pub fn desk_model(self, phones: Vec<String>, seed: u64) -> ModelConfig {
        match self {
            FrontendKind::Sinc => ModelConfig::desk_sinc(phones, seed),
            FrontendKind::Fbank => ModelConfig::desk_fbank(phones, seed),
        }
    }

    /// The tiny preset used for gradient checks.
    pub fn tiny_model(self, phones: Vec<String>, seed: u64) -> ModelConfig {
        match self {
            FrontendKind::Sinc => ModelConfig::tiny_sinc(phones, seed),
            FrontendKind::Fbank => ModelConfig::tiny_fbank(phones, seed),
        }
    }
}

impl std::str::FromStr for FrontendKind {
    type Err = MddError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinc" => Ok(FrontendKind::Sinc),
            "fbank" => Ok(FrontendKind::Fbank),
            other => Err(MddError::Config(format!("unknown front-end {other:?} (expected sinc or fbank)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the CTC loss; the attention loss gets `1 - alpha`.
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub frontend: FrontendKind,
    /// Gradients are rescaled when their global L2 norm exceeds this.
    pub clip_norm: f64,
    /// Step-size multiplier for the sinc cutoff parameters, applied before
    /// clipping.
    pub cutoff_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.5,
            learning_rate: 0.5,
            epochs: 6,
            batch_size: 8,
            seed: 1,
            frontend: FrontendKind::Sinc,
            clip_norm: 5.0,
            cutoff_lr_scale: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(MddError::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(MddError::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(MddError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(MddError::Config("clip_norm must be positive".into()));
        }
        if !(self.cutoff_lr_scale >= 0.0 && self.cutoff_lr_scale.is_finite()) {
            return Err(MddError::Config("cutoff_lr_scale must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLoss {
    /// The value actually optimized.
    pub loss: f64,
    pub ctc: f64,
    pub attention: f64,
    /// False when the CTC branch could not align the target; the attention
    /// branch alone is then used (unless `alpha == 1`).
    pub ctc_feasible: bool,
}

/// `alpha * L_ctc + (1 - alpha) * L_att`; exact at both endpoints.
pub fn combine(alpha: f64, ctc: f64, attention: f64) -> f64 {
    if alpha == 1.0 {
        ctc
    } else if alpha == 0.0 {
        attention
    } else {
        let l = alpha * ctc + (1.0 - alpha) * attention;
        l.clamp(ctc.min(attention), ctc.max(attention))
    }
}

/// Joint loss for one utterance, accumulating gradients into `grads` if given.
pub fn joint_loss(
    model: &AsrModel,
    wave: &Waveform,
    target: &[usize],
    alpha: f64,
    grads: Option<&mut AsrModel>,
) -> Result<JointLoss> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(MddError::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let weights = LossWeights {
        ctc: alpha,
        attention: 1.0 - alpha,
    };
    let b = model.forward_backward(wave, target, weights, grads)?;
    let loss = if b.ctc_feasible || alpha == 1.0 {
        combine(alpha, b.ctc, b.attention)
    } else {
        (1.0 - alpha) * b.attention
    };
    Ok(JointLoss {
        loss,
        ctc: b.ctc,
        attention: b.attention,
        ctc_feasible: b.ctc_feasible,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupError {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn group(&self, name: &str) -> Option<&GroupError> {
        self.groups.iter().find(|g| g.name == name)
    }
}

/// Differences below this are treated as relative to it rather than to the
/// (possibly tiny) gradient magnitude.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Central-difference check of `f`'s gradients, per parameter tensor.
///
/// `f(model, grads)` returns the loss and, when `grads` is given, adds the
/// analytic gradient into it. `max_per_group` limits how many evenly spaced
/// entries of each tensor are probed.
pub fn grad_check<M, F>(model: &M, epsilon: f64, max_per_group: Option<usize>, f: F) -> Result<GradCheckReport>
where
    M: Params + Clone,
    F: Fn(&M, Option<&mut M>) -> Result<f64>,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(MddError::Config(format!("epsilon must be positive and finite, got {epsilon}")));
    }
    let mut grads = zeros_like(model);
    let base = f(model, Some(&mut grads))?;
    if !base.is_finite() {
        return Err(MddError::Refused(format!("loss is not finite ({base})")));
    }
    let analytic: Vec<(String, Vec<f64>)> = grads
        .params()
        .into_iter()
        .map(|(n, t)| (n, t.data().to_vec()))
        .collect();
    let mut groups = Vec::with_capacity(analytic.len());
    for (gi, (name, an)) in analytic.iter().enumerate() {
        let n = an.len();
        let probes: Vec<usize> = match max_per_group {
            Some(m) if m < n => (0..m).map(|k| k * (n - 1) / (m - 1).max(1)).collect(),
            _ => (0..n).collect(),
        };
        let mut worst = 0.0f64;
        for &idx in &probes {
            let mut probe = model.clone();
            let orig = probe.params()[gi].1.data()[idx];
            probe.params_mut()[gi].1.data_mut()[idx] = orig + epsilon;
            let up = f(&probe, None)?;
            probe.params_mut()[gi].1.data_mut()[idx] = orig - epsilon;
            let down = f(&probe, None)?;
            if !(up.is_finite() && down.is_finite()) {
                return Err(MddError::Refused(format!("loss not finite when perturbing {name}[{idx}]")));
            }
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(relative_error(an[idx], numeric));
        }
        groups.push(GroupError {
            name: name.clone(),
            checked: probes.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport { epsilon, groups })
}

/// [`grad_check`] applied to the joint loss of one utterance.
pub fn grad_check_joint(
    model: &AsrModel,
    wave: &Waveform,
    target: &[usize],
    alpha: f64,
    epsilon: f64,
    max_per_group: Option<usize>,
) -> Result<GradCheckReport> {
    grad_check(model, epsilon, max_per_group, |m, g| {
        let l = joint_loss(m, wave, target, alpha, g)?;
        if !l.ctc_feasible && alpha > 0.0 {
            return Err(MddError::Refused("target is not CTC-feasible for this input".into()));
        }
        Ok(l.loss)
    })
}

/// One training or validation utterance.
#[derive(Debug, Clone)]
pub struct Example {
    pub utt_id: String,
    pub wave: Waveform,
    pub target: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub infeasible_ctc: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: AsrModel,
    pub train: TrainConfig,
    pub epoch: usize,
    pub best_dev_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
}

fn check_examples(name: &str, set: &[Example]) -> Result<()> {
    if set.is_empty() {
        return Err(MddError::Input(format!("{name} set is empty")));
    }
    if let Some(e) = set.iter().find(|e| e.target.is_empty() || e.wave.is_empty()) {
        return Err(MddError::Input(format!("{name} utterance {} has zero length", e.utt_id)));
    }
    Ok(())
}

/// Mean joint loss over a set, summed in input order.
pub fn mean_loss(model: &AsrModel, set: &[Example], alpha: f64, exec: Execution) -> Result<f64> {
    let losses = exec.map(set, |e| joint_loss(model, &e.wave, &e.target, alpha, None));
    let mut total = 0.0;
    for l in losses {
        total += l?.loss;
    }
    Ok(total / set.len() as f64)
}

/// Global CMVN statistics of the raw filterbank features of `set`.
pub fn estimate_cmvn(model: &AsrModel, set: &[Example], exec: Execution) -> Result<Option<Cmvn>> {
    let Frontend::Fbank { cfg, .. } = &model.frontend else {
        return Ok(None);
    };
    let feats = exec.map(set, |e| {
        FbankExtractor::new(cfg.clone(), e.wave.sample_rate_hz())?.compute(&e.wave)
    });
    let feats = feats.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Some(Cmvn::estimate(&feats)?))
}

/// Minibatch SGD on the joint loss, keeping the parameters with the lowest
/// dev loss.
///
/// Batches group utterances of similar length; batch order is shuffled per
/// epoch from `cfg.seed`. Each utterance is processed at its own length, so
/// no padding or masking is involved. Per-utterance gradients are computed
/// through `exec` and summed in batch order, which makes the result
/// independent of the thread count.
pub fn train_loop(
    model_config: ModelConfig,
    cfg: &TrainConfig,
    train: &[Example],
    dev: &[Example],
    exec: Execution,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model_config.frontend.name() != cfg.frontend.name() {
        return Err(MddError::Config(format!(
            "model front-end {} does not match training front-end {}",
            model_config.frontend.name(),
            cfg.frontend.name()
        )));
    }
    check_examples("training", train)?;
    check_examples("validation", dev)?;
    let mut model = AsrModel::new(model_config)?;
    if let Some(cmvn) = estimate_cmvn(&model, train, exec)? {
        model.set_cmvn(cmvn)?;
    }

    let mut order: Vec<usize> = (0..train.len()).collect();
    order.sort_by_key(|&i| (train[i].wave.len(), i));
    let mut batches: Vec<Vec<usize>> = order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect();

    let mut best = Checkpoint {
        model: model.clone(),
        train: cfg.clone(),
        epoch: 0,
        best_dev_loss: f64::INFINITY,
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        batches.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut infeasible = 0;
        for batch in &batches {
            let results = exec.map(batch, |&i| {
                let e = &train[i];
                let mut g = zeros_like(&model);
                joint_loss(&model, &e.wave, &e.target, cfg.alpha, Some(&mut g)).map(|l| (l, g))
            });
            let mut sum = zeros_like(&model);
            for r in results {
                let (l, g) = r?;
                epoch_loss += l.loss;
                infeasible += usize::from(!l.ctc_feasible);
                crate::tensor::accumulate(&mut sum, 1.0, &g);
            }
            for (name, t) in sum.params_mut() {
                if name.starts_with("frontend.theta_") {
                    t.data_mut().iter_mut().for_each(|v| *v *= cfg.cutoff_lr_scale);
                }
            }
            let mut scale = 1.0 / batch.len() as f64;
            let norm = global_norm(&sum) * scale;
            if norm > cfg.clip_norm {
                scale *= cfg.clip_norm / norm;
            }
            crate::tensor::accumulate(&mut model, -cfg.learning_rate * scale, &sum);
        }
        let dev_loss = mean_loss(&model, dev, cfg.alpha, exec)?;
        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            dev_loss,
            infeasible_ctc: infeasible,
        };
        on_epoch(&stats);
        if dev_loss < best.best_dev_loss {
            best = Checkpoint {
                model: model.clone(),
                train: cfg.clone(),
                epoch,
                best_dev_loss: dev_loss,
            };
        }
        history.push(stats);
    }
    Ok(TrainOutcome {
        checkpoint: best,
        history,
    })
}

const MAGIC: &[u8; 8] = b"WMDDCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    epoch: usize,
    best_dev_loss: f64,
    train: TrainConfig,
    model: ModelConfig,
}

fn buffers(model: &AsrModel) -> Vec<(String, Tensor)> {
    match &model.frontend {
        Frontend::Fbank { cmvn, .. } => vec![
            ("buffer.cmvn.mean".into(), Tensor::from_vec(&[cmvn.mean.len()], cmvn.mean.clone())),
            (
                "buffer.cmvn.inv_std".into(),
                Tensor::from_vec(&[cmvn.inv_std.len()], cmvn.inv_std.clone()),
            ),
        ],
        Frontend::Sinc(_) => Vec::new(),
    }
}

fn write_tensor<W: Write>(w: &mut W, name: &str, t: &Tensor) -> std::io::Result<()> {
    w.write_all(&(name.len() as u64).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

impl Checkpoint {
    /// Binary layout: magic, version (u32), TOML header length (u64) and
    /// text, tensor count (u64), then per tensor its name, rank, dims and
    /// little-endian f64 data. All integers are little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            epoch: self.epoch,
            best_dev_loss: self.best_dev_loss,
            train: self.train.clone(),
            model: self.model.config.clone(),
        };
        let text = toml::to_string(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        let params = self.model.params();
        let extra = buffers(&self.model);
        out.extend_from_slice(&((params.len() + extra.len()) as u64).to_le_bytes());
        for (name, t) in params {
            write_tensor(&mut out, &name, t).expect("writing to a Vec cannot fail");
        }
        for (name, t) in &extra {
            write_tensor(&mut out, name, t).expect("writing to a Vec cannot fail");
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: String| MddError::format(origin, msg);
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = read_u32(&mut r).ok_or_else(|| bad("truncated header".into()))?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let len = read_u64(&mut r).ok_or_else(|| bad("truncated header".into()))? as usize;
        if r.len() < len {
            return Err(bad("truncated header".into()));
        }
        let text = std::str::from_utf8(&r[..len]).map_err(|_| bad("header is not UTF-8".into()))?;
        let header: Header = toml::from_str(text).map_err(|e| bad(format!("bad header: {e}")))?;
        r = &r[len..];
        let mut model = AsrModel::new(header.model).map_err(|e| bad(format!("bad model config: {e}")))?;
        let count = read_u64(&mut r).ok_or_else(|| bad("truncated tensor table".into()))? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            tensors.push(read_tensor(&mut r).ok_or_else(|| bad("truncated tensor".into()))?);
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes after tensors".into()));
        }
        let mut tensors = tensors.into_iter();
        for (name, slot) in model.params_mut() {
            let (tname, t) = tensors.next().ok_or_else(|| bad(format!("missing tensor {name}")))?;
            if tname != name || t.shape() != slot.shape() {
                return Err(bad(format!(
                    "tensor {tname} {:?} does not match model parameter {name} {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        if let Frontend::Fbank { cmvn, .. } = &mut model.frontend {
            let dim = cmvn.mean.len();
            for target in [&mut cmvn.mean, &mut cmvn.inv_std] {
                let (_, t) = tensors.next().ok_or_else(|| bad("missing CMVN buffer".into()))?;
                if t.shape() != [dim] {
                    return Err(bad("CMVN buffer has wrong size".into()));
                }
                *target = t.data().to_vec();
            }
        }
        if tensors.next().is_some() {
            return Err(bad("unexpected extra tensors".into()));
        }
        Ok(Checkpoint {
            model,
            train: header.train,
            epoch: header.epoch,
            best_dev_loss: header.best_dev_loss,
        })
    }

    /// Writes the checkpoint and a `key=value` sidecar next to it
    /// (`<path>.cfg`).
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| MddError::io(path, e))?;
        let side = sidecar_path(path);
        std::fs::write(&side, self.sidecar_text()).map_err(|e| MddError::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| MddError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn sidecar_text(&self) -> String {
        let header = Header {
            epoch: self.epoch,
            best_dev_loss: self.best_dev_loss,
            train: self.train.clone(),
            model: self.model.config.clone(),
        };
        let value = toml::Value::try_from(&header).expect("header serializes");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        lines.join("\n") + "\n"
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, x) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        toml::Value::Array(a) if a.iter().any(|x| x.is_table()) => {
            for (i, x) in a.iter().enumerate() {
                flatten(&format!("{prefix}.{i}"), x, out);
            }
        }
        toml::Value::String(s) => out.push(format!("{prefix}={s}")),
        other => out.push(format!("{prefix}={other}")),
    }
}

fn read_u32(r: &mut &[u8]) -> Option<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).ok()?;
    Some(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Option<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).ok()?;
    Some(u64::from_le_bytes(b))
}

fn read_tensor(r: &mut &[u8]) -> Option<(String, Tensor)> {
    let n = usize::try_from(read_u64(r)?).ok()?;
    if r.len() < n {
        return None;
    }
    let name = String::from_utf8(r[..n].to_vec()).ok()?;
    *r = &r[n..];
    let rank = usize::try_from(read_u64(r)?).ok()?;
    if rank > 8 {
        return None;
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(usize::try_from(read_u64(r)?).ok()?);
    }
    let len: usize = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d))?;
    if r.len() / 8 < len {
        return None;
    }
    let data = (0..len)
        .map(|_| {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map(|_| f64::from_le_bytes(b))
        })
        .collect::<std::io::Result<Vec<f64>>>()
        .ok()?;
    Some((name, Tensor::from_vec(&shape, data)))
}

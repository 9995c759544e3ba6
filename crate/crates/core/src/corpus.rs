//! Synthetic formant corpus: phone synthesis, mispronunciation injection,
//! WAV I/O and the on-disk dataset layout.
//!
//! A dataset directory holds `wav/<utt_id>.wav`, `transcripts.tsv`
//! (utt_id, canonical phones), `annotations.tsv`, `splits.tsv`
//! (utt_id, split) and `inventory.tsv` (phone, formants, durations).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{MddError, Result};
use crate::exec::Execution;
use crate::frontend::{Waveform, DEFAULT_SAMPLE_RATE_HZ};
use crate::mddeval::{mdd_classify, parse_annotations, write_annotations, UttAnnotation};

/// Peak amplitude every synthesized waveform is scaled to.
pub const PEAK_AMPLITUDE: f64 = 0.9;
/// Minimum Euclidean distance between the formant vectors of two phones.
pub const MIN_FORMANT_SEPARATION_HZ: f64 = 200.0;
const MAX_INJECTION_ATTEMPTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneSpec {
    pub symbol: String,
    pub formants_hz: Vec<f64>,
    pub duration_ms: f64,
    /// Durations are drawn uniformly from `duration_ms +- jitter_ms`.
    pub jitter_ms: f64,
}

impl PhoneSpec {
    pub fn new(symbol: &str, formants_hz: &[f64], duration_ms: f64, jitter_ms: f64) -> Self {
        PhoneSpec {
            symbol: symbol.to_string(),
            formants_hz: formants_hz.to_vec(),
            duration_ms,
            jitter_ms,
        }
    }

    fn distance(&self, other: &PhoneSpec) -> f64 {
        self.formants_hz
            .iter()
            .zip(&other.formants_hz)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Six vowel-like phones with first/second/third formants in Hz.
pub fn default_inventory() -> Vec<PhoneSpec> {
    [
        ("aa", [730.0, 1090.0, 2440.0]),
        ("iy", [270.0, 2290.0, 3010.0]),
        ("uw", [300.0, 870.0, 2240.0]),
        ("eh", [530.0, 1840.0, 2480.0]),
        ("ao", [570.0, 840.0, 2410.0]),
        ("er", [490.0, 1350.0, 1690.0]),
    ]
    .iter()
    .map(|(s, f)| PhoneSpec::new(s, f, 80.0, 20.0))
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = MddError;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| MddError::Input(format!("unknown split {s:?}")))
    }
}

/// One value per split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerSplit {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl PerSplit {
    pub fn get(&self, s: Split) -> f64 {
        match s {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }

    pub fn uniform(v: f64) -> Self {
        PerSplit {
            train: v,
            dev: v,
            test: v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub phones: Vec<PhoneSpec>,
    pub num_utterances: usize,
    pub min_phones: usize,
    pub max_phones: usize,
    /// Per-position mispronunciation probability for each split.
    pub error_rate: PerSplit,
    /// Fraction of injected errors that are deletions rather than substitutions.
    pub deletion_fraction: f64,
    /// Standard deviation of the additive Gaussian noise, before peak normalization.
    pub noise_level: f64,
    pub crossfade_ms: f64,
    pub sample_rate_hz: u32,
    pub split_fractions: PerSplit,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            phones: default_inventory(),
            num_utterances: 600,
            min_phones: 3,
            max_phones: 8,
            error_rate: PerSplit {
                train: 0.01,
                dev: 0.14,
                test: 0.14,
            },
            deletion_fraction: 0.25,
            noise_level: 0.02,
            crossfade_ms: 5.0,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            split_fractions: PerSplit {
                train: 500.0 / 600.0,
                dev: 50.0 / 600.0,
                test: 50.0 / 600.0,
            },
            seed: 1,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MddError::Config(m));
        if self.phones.is_empty() {
            return bad("phone inventory is empty".into());
        }
        if self.phones.len() < 3 {
            return bad("at least 3 phones are needed to avoid repeated neighbours".into());
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        let width = self.phones[0].formants_hz.len();
        for p in &self.phones {
            if !(2..=3).contains(&p.formants_hz.len()) || p.formants_hz.len() != width {
                return bad(format!("phone {} must have the same 2 or 3 formants as the others", p.symbol));
            }
            if p.formants_hz.iter().any(|&f| !(f > 0.0 && f < nyquist)) {
                return bad(format!("phone {} has a formant outside (0, {nyquist}) Hz", p.symbol));
            }
            if !(p.duration_ms > 0.0 && p.jitter_ms >= 0.0 && p.jitter_ms < p.duration_ms) {
                return bad(format!("phone {} needs duration > jitter >= 0", p.symbol));
            }
        }
        for (i, a) in self.phones.iter().enumerate() {
            for b in &self.phones[i + 1..] {
                if a.symbol == b.symbol {
                    return bad(format!("duplicate phone {}", a.symbol));
                }
                if a.distance(b) < MIN_FORMANT_SEPARATION_HZ {
                    return bad(format!(
                        "phones {} and {} are only {:.0} Hz apart (minimum {MIN_FORMANT_SEPARATION_HZ})",
                        a.symbol,
                        b.symbol,
                        a.distance(b)
                    ));
                }
            }
        }
        if self.min_phones == 0 || self.min_phones > self.max_phones {
            return bad("need 1 <= min_phones <= max_phones".into());
        }
        for s in Split::ALL {
            if !(0.0..=1.0).contains(&self.error_rate.get(s)) || !(self.split_fractions.get(s) >= 0.0) {
                return bad("error rates must lie in [0, 1] and split fractions be non-negative".into());
            }
        }
        let sum = self.split_fractions.train + self.split_fractions.dev + self.split_fractions.test;
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions sum to {sum}, not 1"));
        }
        if !(0.0..=1.0).contains(&self.deletion_fraction) || !(self.noise_level >= 0.0) || !(self.crossfade_ms >= 0.0) {
            return bad("deletion_fraction must lie in [0, 1]; noise and cross-fade must be non-negative".into());
        }
        if self.num_utterances == 0 {
            return bad("num_utterances must be positive".into());
        }
        Ok(())
    }

    pub fn phone_symbols(&self) -> Vec<String> {
        self.phones.iter().map(|p| p.symbol.clone()).collect()
    }

    /// Number of utterances in each split (train and dev rounded, test takes the rest).
    pub fn split_counts(&self) -> [usize; 3] {
        let n = self.num_utterances;
        let train = (((n as f64) * self.split_fractions.train).round() as usize).min(n);
        let dev = (((n as f64) * self.split_fractions.dev).round() as usize).min(n - train);
        [train, dev, n - train - dev]
    }
}

struct Segment<'a> {
    spec: &'a PhoneSpec,
    start: usize,
    len: usize,
    phases: Vec<f64>,
}

/// Trapezoid weight of a segment: ramps of `2h` samples centred on each
/// internal boundary, so neighbouring weights sum to one.
fn segment_weight(seg: &Segment, n: usize, total: usize, h: usize) -> f64 {
    let (a, b) = (seg.start as f64, (seg.start + seg.len) as f64);
    let t = n as f64 + 0.5;
    let hf = h as f64;
    let rise = if seg.start == 0 || h == 0 {
        1.0
    } else {
        ((t - (a - hf)) / (2.0 * hf)).clamp(0.0, 1.0)
    };
    let fall = if seg.start + seg.len == total || h == 0 {
        1.0
    } else {
        (((b + hf) - t) / (2.0 * hf)).clamp(0.0, 1.0)
    };
    rise.min(fall)
}

fn render<R: Rng>(segments: &[Segment], total: usize, cfg_noise: f64, crossfade: usize, fs: f64, rng: &mut R) -> Result<Waveform> {
    let h = crossfade / 2;
    let mut x = vec![0.0; total];
    for seg in segments {
        let lo = seg.start.saturating_sub(h);
        let hi = (seg.start + seg.len + h).min(total);
        let amps: Vec<f64> = (0..seg.spec.formants_hz.len()).map(|k| 1.0 / (k as f64 + 1.0)).collect();
        for (n, xn) in x.iter_mut().enumerate().take(hi).skip(lo) {
            let w = segment_weight(seg, n, total, h);
            if w == 0.0 {
                continue;
            }
            let t = n as f64 / fs;
            let mut s = 0.0;
            for ((f, a), ph) in seg.spec.formants_hz.iter().zip(&amps).zip(&seg.phases) {
                s += a * (2.0 * PI * f * t + ph).sin();
            }
            *xn += w * s;
        }
    }
    if cfg_noise > 0.0 {
        let normal = Normal::new(0.0, cfg_noise).map_err(|e| MddError::Config(e.to_string()))?;
        for v in &mut x {
            *v += normal.sample(rng);
        }
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = PEAK_AMPLITUDE / peak;
        for v in &mut x {
            *v = (*v * g).clamp(-PEAK_AMPLITUDE, PEAK_AMPLITUDE);
        }
    }
    Waveform::new(x, fs as u32)
}

fn synth_with_rng<R: Rng>(
    phones: &[String],
    specs: &[PhoneSpec],
    noise: f64,
    crossfade_ms: f64,
    fs: u32,
    rng: &mut R,
) -> Result<Waveform> {
    if phones.is_empty() {
        return Err(MddError::Input("cannot synthesize an empty phone sequence".into()));
    }
    let fsf = fs as f64;
    let mut segments = Vec::with_capacity(phones.len());
    let mut start = 0;
    for p in phones {
        let spec = specs
            .iter()
            .find(|s| &s.symbol == p)
            .ok_or_else(|| MddError::Input(format!("no synthesis spec for phone {p:?}")))?;
        let jitter = if spec.jitter_ms > 0.0 {
            rng.random_range(-spec.jitter_ms..=spec.jitter_ms)
        } else {
            0.0
        };
        let len = (((spec.duration_ms + jitter) * fsf / 1000.0).round() as usize).max(1);
        let phases = (0..spec.formants_hz.len()).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        segments.push(Segment {
            spec,
            start,
            len,
            phases,
        });
        start += len;
    }
    let crossfade = (crossfade_ms * fsf / 1000.0).round() as usize;
    let shortest = segments.iter().map(|s| s.len).min().unwrap_or(0);
    render(&segments, start, noise, crossfade.min(shortest), fsf, rng)
}

/// Synthesizes a phone sequence with default noise and cross-fade settings.
pub fn synth_wave(phones: &[String], specs: &[PhoneSpec], seed: u64) -> Result<Waveform> {
    let d = CorpusConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synth_with_rng(phones, specs, d.noise_level, d.crossfade_ms, d.sample_rate_hz, &mut rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub split: Split,
    pub annotation: UttAnnotation,
    pub wave: Waveform,
}

impl Utterance {
    pub fn utt_id(&self) -> &str {
        &self.annotation.utt_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub phones: Vec<PhoneSpec>,
    pub utterances: Vec<Utterance>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.split == s)
    }

    pub fn phone_symbols(&self) -> Vec<String> {
        self.phones.iter().map(|p| p.symbol.clone()).collect()
    }
}

pub fn utt_id(index: usize) -> String {
    format!("utt{index:05}")
}

/// The phone closest in formant space to `target` that is neither `target`
/// itself nor one of `avoid`.
fn nearest_confusable(specs: &[PhoneSpec], target: usize, avoid: &[usize]) -> Option<usize> {
    (0..specs.len())
        .filter(|&j| j != target && !avoid.contains(&j))
        .min_by(|&a, &b| {
            specs[target]
                .distance(&specs[a])
                .total_cmp(&specs[target].distance(&specs[b]))
                .then(a.cmp(&b))
        })
}

/// Injects errors at rate `p`. Returns perceived labels (None = deleted).
fn inject<R: Rng>(canon: &[usize], specs: &[PhoneSpec], p: f64, del_frac: f64, rng: &mut R) -> Vec<Option<usize>> {
    let mut out: Vec<Option<usize>> = Vec::with_capacity(canon.len());
    for (i, &c) in canon.iter().enumerate() {
        if !rng.random_bool(p) {
            out.push(Some(c));
            continue;
        }
        let want_delete = rng.random_bool(del_frac);
        let left = out.iter().rev().flatten().next().copied();
        let right = canon.get(i + 1).copied();
        // A deletion must not leave two equal phones adjacent.
        if want_delete && canon.len() > 1 && (left.is_none() || right.is_none() || left != right) {
            out.push(None);
            continue;
        }
        let avoid: Vec<usize> = left.into_iter().chain(right).collect();
        out.push(Some(nearest_confusable(specs, c, &avoid).unwrap_or(c)));
    }
    out
}

fn draw_canonical<R: Rng>(n_phones: usize, len: usize, rng: &mut R) -> Vec<usize> {
    let mut seq: Vec<usize> = Vec::with_capacity(len);
    for _ in 0..len {
        let mut p = rng.random_range(0..n_phones);
        if let Some(&last) = seq.last() {
            while p == last {
                p = rng.random_range(0..n_phones);
            }
        }
        seq.push(p);
    }
    seq
}

fn has_adjacent_repeat(seq: &[&str]) -> bool {
    seq.windows(2).any(|w| w[0] == w[1])
}

/// Draws and synthesizes utterance `index`. Uses its own RNG stream, so
/// utterances can be generated in any order.
pub fn gen_utterance(cfg: &CorpusConfig, index: usize, split: Split) -> Result<Utterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let specs = &cfg.phones;
    let sym = |i: usize| specs[i].symbol.clone();
    let len = rng.random_range(cfg.min_phones..=cfg.max_phones);
    let canon = draw_canonical(specs.len(), len, &mut rng);
    let canonical: Vec<String> = canon.iter().map(|&i| sym(i)).collect();
    let p = cfg.error_rate.get(split);
    let id = utt_id(index);
    let mut annotation = UttAnnotation::new(id.clone(), canonical.clone(), canonical.iter().cloned().map(Some).collect())?;
    // Redraw error patterns whose realization is ambiguous under alignment,
    // so that scoring the perceived sequence recovers the injected errors.
    for _ in 0..MAX_INJECTION_ATTEMPTS {
        let perceived: Vec<Option<String>> = inject(&canon, specs, p, cfg.deletion_fraction, &mut rng)
            .into_iter()
            .map(|o| o.map(sym))
            .collect();
        let candidate = UttAnnotation::new(id.clone(), canonical.clone(), perceived)?;
        let realized = candidate.realized();
        let r: Vec<&str> = realized.iter().map(String::as_str).collect();
        if r.is_empty() || has_adjacent_repeat(&r) {
            continue;
        }
        let c = mdd_classify(&candidate, &realized)?;
        if c.fp == 0 && c.fn_ == 0 && c.de == 0 {
            annotation = candidate;
            break;
        }
    }
    let wave = synth_with_rng(
        &annotation.realized(),
        specs,
        cfg.noise_level,
        cfg.crossfade_ms,
        cfg.sample_rate_hz,
        &mut rng,
    )?;
    Ok(Utterance {
        split,
        annotation,
        wave,
    })
}

/// Generates the whole corpus. Utterances `0..train` form the training
/// split, followed by dev and test.
pub fn gen_corpus(cfg: &CorpusConfig, exec: Execution) -> Result<Dataset> {
    cfg.validate()?;
    let [train, dev, _] = cfg.split_counts();
    let split_of = |i: usize| {
        if i < train {
            Split::Train
        } else if i < train + dev {
            Split::Dev
        } else {
            Split::Test
        }
    };
    let utterances = exec
        .map_range(cfg.num_utterances, |i| gen_utterance(cfg, i, split_of(i)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        phones: cfg.phones.clone(),
        utterances,
    })
}

/// Reads 16-bit PCM mono audio at 16 kHz.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => MddError::io(path, io),
        other => MddError::format(path, other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(MddError::format(path, format!("expected mono, found {} channels", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(MddError::format(
            path,
            format!("expected 16-bit PCM, found {}-bit {:?}", spec.bits_per_sample, spec.sample_format),
        ));
    }
    if spec.sample_rate != DEFAULT_SAMPLE_RATE_HZ {
        return Err(MddError::format(
            path,
            format!("expected {DEFAULT_SAMPLE_RATE_HZ} Hz, found {} Hz", spec.sample_rate),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<f64>, _>>()
        .map_err(|e| MddError::format(path, e.to_string()))?;
    if samples.is_empty() {
        return Err(MddError::format(path, "no audio samples"));
    }
    Waveform::new(samples, spec.sample_rate).map_err(|e| MddError::format(path, e.to_string()))
}

pub fn write_wav(wave: &Waveform, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let werr = |e: hound::Error| match e {
        hound::Error::IoError(io) => MddError::io(path, io),
        other => MddError::format(path, other.to_string()),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(werr)?;
    for &s in wave.samples() {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(q).map_err(werr)?;
    }
    w.finalize().map_err(werr)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| MddError::io(path, e))?,
    ))
}

/// Writes the dataset layout under `dir` (created if needed).
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| MddError::io(&wav_dir, e))?;
    for u in &ds.utterances {
        write_wav(&u.wave, &wav_dir.join(format!("{}.wav", u.utt_id())))?;
    }
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| MddError::io(p, e)
    };

    let path = dir.join("transcripts.tsv");
    let mut f = create(&path)?;
    for u in &ds.utterances {
        writeln!(f, "{}\t{}", u.utt_id(), u.annotation.canonical.join(" ")).map_err(io(&path))?;
    }
    f.flush().map_err(io(&path))?;

    let path = dir.join("annotations.tsv");
    let mut f = create(&path)?;
    let anns: Vec<UttAnnotation> = ds.utterances.iter().map(|u| u.annotation.clone()).collect();
    write_annotations(&mut f, &anns).map_err(io(&path))?;
    f.flush().map_err(io(&path))?;

    let path = dir.join("splits.tsv");
    let mut f = create(&path)?;
    for u in &ds.utterances {
        writeln!(f, "{}\t{}", u.utt_id(), u.split).map_err(io(&path))?;
    }
    f.flush().map_err(io(&path))?;

    let path = dir.join("inventory.tsv");
    let mut f = create(&path)?;
    for p in &ds.phones {
        let formants: Vec<String> = p.formants_hz.iter().map(|x| x.to_string()).collect();
        writeln!(f, "{}\t{}\t{}\t{}", p.symbol, formants.join(" "), p.duration_ms, p.jitter_ms).map_err(io(&path))?;
    }
    f.flush().map_err(io(&path))
}

fn read_lines(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let f = std::fs::File::open(path).map_err(|e| MddError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| MddError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((n + 1, line.split('\t').map(str::to_string).collect()));
        }
    }
    Ok(out)
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| MddError::format(path, format!("line {line}: {s:?} is not a number")))
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("inventory.tsv");
    let mut phones = Vec::new();
    for (n, cols) in read_lines(&path)? {
        if cols.len() != 4 {
            return Err(MddError::format(&path, format!("line {n}: expected 4 columns")));
        }
        let formants = cols[1]
            .split_whitespace()
            .map(|x| parse_f64(&path, n, x))
            .collect::<Result<Vec<_>>>()?;
        phones.push(PhoneSpec {
            symbol: cols[0].clone(),
            formants_hz: formants,
            duration_ms: parse_f64(&path, n, &cols[2])?,
            jitter_ms: parse_f64(&path, n, &cols[3])?,
        });
    }

    let path = dir.join("annotations.tsv");
    let f = std::fs::File::open(&path).map_err(|e| MddError::io(&path, e))?;
    let annotations = parse_annotations(BufReader::new(f), &path)?;

    let path = dir.join("transcripts.tsv");
    let mut transcripts = BTreeMap::new();
    for (n, cols) in read_lines(&path)? {
        if cols.len() != 2 {
            return Err(MddError::format(&path, format!("line {n}: expected 2 columns")));
        }
        transcripts.insert(cols[0].clone(), cols[1].split_whitespace().map(str::to_string).collect::<Vec<_>>());
    }

    let path = dir.join("splits.tsv");
    let mut splits = BTreeMap::new();
    for (n, cols) in read_lines(&path)? {
        if cols.len() != 2 {
            return Err(MddError::format(&path, format!("line {n}: expected 2 columns")));
        }
        let s: Split = cols[1]
            .parse()
            .map_err(|e: MddError| MddError::format(&path, format!("line {n}: {e}")))?;
        splits.insert(cols[0].clone(), s);
    }

    let mut utterances = Vec::with_capacity(annotations.len());
    for a in annotations {
        let id = a.utt_id.clone();
        match transcripts.get(&id) {
            Some(t) if *t == a.canonical => {}
            _ => {
                return Err(MddError::format(
                    dir.join("transcripts.tsv"),
                    format!("transcript of {id} missing or inconsistent with annotations"),
                ))
            }
        }
        let split = *splits
            .get(&id)
            .ok_or_else(|| MddError::format(dir.join("splits.tsv"), format!("no split for {id}")))?;
        let wave = read_wav(&dir.join("wav").join(format!("{id}.wav")))?;
        utterances.push(Utterance {
            split,
            annotation: a,
            wave,
        });
    }
    Ok(Dataset { phones, utterances })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phones(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn default_config_is_valid() {
        CorpusConfig::default().validate().unwrap();
        assert_eq!(CorpusConfig::default().split_counts(), [500, 50, 50]);
    }

    #[test]
    fn durations_add_up() {
        let specs = vec![
            PhoneSpec::new("a", &[500.0, 1300.0], 100.0, 0.0),
            PhoneSpec::new("b", &[800.0, 2000.0], 100.0, 0.0),
        ];
        let w = synth_wave(&phones(&["a", "b"]), &specs, 3).unwrap();
        assert_eq!(w.len(), 3200);
        assert!(w.samples().iter().all(|s| s.abs() <= PEAK_AMPLITUDE));
    }

    #[test]
    fn unknown_phone_rejected() {
        let e = synth_wave(&phones(&["zz"]), &default_inventory(), 0);
        assert!(matches!(e, Err(MddError::Input(_))));
    }

    #[test]
    fn close_formants_rejected() {
        let mut cfg = CorpusConfig::default();
        cfg.phones[1].formants_hz = vec![740.0, 1100.0, 2450.0];
        assert!(matches!(cfg.validate(), Err(MddError::Config(_))));
    }

    #[test]
    fn empty_inventory_rejected() {
        let cfg = CorpusConfig {
            phones: vec![],
            ..CorpusConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(MddError::Config(_))));
    }

    #[test]
    fn zero_rate_leaves_canonical() {
        let cfg = CorpusConfig {
            num_utterances: 40,
            error_rate: PerSplit::uniform(0.0),
            ..CorpusConfig::default()
        };
        let ds = gen_corpus(&cfg, Execution::Sequential).unwrap();
        assert!(ds.utterances.iter().all(|u| u.annotation.error_count() == 0));
    }

    #[test]
    fn nearest_confusable_skips_neighbours() {
        let specs = default_inventory();
        let n = nearest_confusable(&specs, 0, &[]).unwrap();
        let m = nearest_confusable(&specs, 0, &[n]).unwrap();
        assert_ne!(n, m);
        assert_ne!(m, 0);
    }
}

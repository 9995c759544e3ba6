//! Learnable sinc bandpass filters.
//!
//! Each filter is the difference of two low-pass sinc impulse responses,
//! parameterized only by its cutoffs. Cutoffs are kept in normalized units
//! (cycles per sample) so plain gradient steps are well scaled:
//! `f1 = |theta_low|`, `f2 = f1 + |theta_band| + min_band`, both clamped to
//! Nyquist (0.5).

use std::f64::consts::PI;

use rand::Rng;

use super::conv::{ConvCache, ConvStack};
use super::{FeatureSequence, FrontendConfig, Waveform};
use crate::error::{MddError, Result};
use crate::tensor::{dot, prefixed, prefixed_mut, Params, Tensor};

/// Frequency grid used to find each kernel's peak gain (bins over `[0, pi]`).
const PEAK_BINS: usize = 512;
/// Kernels whose peak gain falls below this are left unnormalized.
const PEAK_FLOOR: f64 = 1e-10;

/// `sin(x) / x`, with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// The learnable cutoff pairs of a sinc filterbank.
#[derive(Debug, Clone, PartialEq)]
pub struct SincFilterbankParams {
    /// Per-filter low cutoff, cycles/sample (sign is ignored).
    pub theta_low: Tensor,
    /// Per-filter bandwidth above `min_band`, cycles/sample (sign is ignored).
    pub theta_band: Tensor,
    pub kernel_length: usize,
    pub sample_rate_hz: u32,
    /// Minimum bandwidth in Hz added on top of `|theta_band|`.
    pub min_band_hz: f64,
}

impl SincFilterbankParams {
    pub const DEFAULT_MIN_BAND_HZ: f64 = 50.0;
    pub const DEFAULT_FILTERS: usize = 80;
    pub const DEFAULT_KERNEL_LENGTH: usize = 251;

    /// Mel-spaced initialization: band edges equally spaced in mel between
    /// 30 Hz and 80 Hz below Nyquist, so no cutoff starts on the clamp.
    pub fn mel_init(filter_count: usize, kernel_length: usize, sample_rate_hz: u32) -> Result<Self> {
        if filter_count == 0 {
            return Err(MddError::Config("filter_count must be >= 1".into()));
        }
        let fs = sample_rate_hz as f64;
        let lo = hz_to_mel(30.0);
        let hi = hz_to_mel(fs / 2.0 - 30.0 - Self::DEFAULT_MIN_BAND_HZ);
        let edges: Vec<f64> = (0..=filter_count)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / filter_count as f64))
            .collect();
        let min_band = Self::DEFAULT_MIN_BAND_HZ;
        let theta_low = edges[..filter_count].iter().map(|f| f / fs).collect();
        let theta_band = edges
            .windows(2)
            .map(|w| ((w[1] - w[0]) - min_band).max(0.0) / fs)
            .collect();
        let p = SincFilterbankParams {
            theta_low: Tensor::from_vec(&[filter_count], theta_low),
            theta_band: Tensor::from_vec(&[filter_count], theta_band),
            kernel_length,
            sample_rate_hz,
            min_band_hz: min_band,
        };
        p.validate()?;
        Ok(p)
    }

    /// Filters with exactly the given `(f1, f2)` cutoffs in Hz. The minimum
    /// band is set to zero so that `f1 == f2` is representable.
    pub fn from_cutoffs_hz(cutoffs: &[(f64, f64)], kernel_length: usize, sample_rate_hz: u32) -> Result<Self> {
        let fs = sample_rate_hz as f64;
        for &(f1, f2) in cutoffs {
            if !(0.0 <= f1 && f1 <= f2 && f2 <= fs / 2.0) {
                return Err(MddError::Config(format!(
                    "cutoffs ({f1}, {f2}) Hz violate 0 <= f1 <= f2 <= {}",
                    fs / 2.0
                )));
            }
        }
        let p = SincFilterbankParams {
            theta_low: Tensor::from_vec(&[cutoffs.len()], cutoffs.iter().map(|c| c.0 / fs).collect()),
            theta_band: Tensor::from_vec(
                &[cutoffs.len()],
                cutoffs.iter().map(|c| (c.1 - c.0) / fs).collect(),
            ),
            kernel_length,
            sample_rate_hz,
            min_band_hz: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_length.is_multiple_of(2) || self.kernel_length == 0 {
            return Err(MddError::Config(format!(
                "kernel_length must be odd and positive, got {}",
                self.kernel_length
            )));
        }
        if self.sample_rate_hz == 0 {
            return Err(MddError::Config("sample rate must be positive".into()));
        }
        if self.theta_low.is_empty() || self.theta_low.len() != self.theta_band.len() {
            return Err(MddError::Config("theta_low/theta_band length mismatch".into()));
        }
        if !(0.0..self.sample_rate_hz as f64 / 2.0).contains(&self.min_band_hz) {
            return Err(MddError::Config("min_band_hz out of range".into()));
        }
        Ok(())
    }

    pub fn filter_count(&self) -> usize {
        self.theta_low.len()
    }

    fn min_band(&self) -> f64 {
        self.min_band_hz / self.sample_rate_hz as f64
    }

    /// Normalized cutoffs of filter `i` plus whether each one is unclamped
    /// (i.e. gradients pass through it).
    fn cutoffs_with_flags(&self, i: usize) -> (f64, f64, bool, bool) {
        let mb = self.min_band();
        let f1_max = 0.5 - mb;
        let raw_low = self.theta_low.data()[i].abs();
        let (f1, low_free) = if raw_low > f1_max { (f1_max, false) } else { (raw_low, true) };
        let raw_high = f1 + self.theta_band.data()[i].abs() + mb;
        let (f2, high_free) = if raw_high > 0.5 { (0.5, false) } else { (raw_high, true) };
        (f1, f2, low_free, high_free)
    }

    /// `(f1, f2)` in Hz for filter `i`.
    pub fn cutoffs_hz(&self, i: usize) -> (f64, f64) {
        let (f1, f2, _, _) = self.cutoffs_with_flags(i);
        let fs = self.sample_rate_hz as f64;
        (f1 * fs, f2 * fs)
    }
}

/// Impulse response taps, centered at `t = 0` (index `len / 2`).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterKernel {
    pub taps: Vec<f64>,
}

impl FilterKernel {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

/// `2 f2 sinc(2 pi f2 t) - 2 f1 sinc(2 pi f1 t)` at integer `t`, with
/// cutoffs in cycles/sample. No window, no normalization.
pub fn raw_sinc_kernel(f1: f64, f2: f64, kernel_length: usize) -> Vec<f64> {
    let half = kernel_length / 2;
    let half_taps: Vec<f64> = (0..=half)
        .map(|t| {
            let t = t as f64;
            2.0 * f2 * sinc(2.0 * PI * f2 * t) - 2.0 * f1 * sinc(2.0 * PI * f1 * t)
        })
        .collect();
    mirror(&half_taps)
}

fn mirror(half: &[f64]) -> Vec<f64> {
    let m = half.len() - 1;
    (0..2 * m + 1)
        .map(|i| half[i.abs_diff(m)])
        .collect()
}

/// Symmetric Hamming window, evaluated on `|t|` so both halves are bit-identical.
fn hamming_symmetric(kernel_length: usize) -> Vec<f64> {
    let half = kernel_length / 2;
    if half == 0 {
        return vec![1.0];
    }
    let half_w: Vec<f64> = (0..=half)
        .map(|t| 0.54 + 0.46 * (PI * t as f64 / half as f64).cos())
        .collect();
    mirror(&half_w)
}

/// Everything the backward pass needs about one materialized filter.
#[derive(Debug, Clone)]
pub struct KernelCache {
    f1: f64,
    f2: f64,
    low_free: bool,
    high_free: bool,
    windowed: Vec<f64>,
    peak: f64,
    peak_omega: f64,
    peak_bin: usize,
    peak_sign: f64,
}

struct KernelBank {
    window: Vec<f64>,
    /// `cos(omega_j * t)` for `t = 0..=half`, row per grid bin.
    cos_table: Vec<f64>,
}

impl KernelBank {
    fn new(kernel_length: usize) -> Self {
        let half = kernel_length / 2;
        let mut cos_table = Vec::with_capacity((PEAK_BINS + 1) * (half + 1));
        for j in 0..=PEAK_BINS {
            let omega = PI * j as f64 / PEAK_BINS as f64;
            cos_table.extend((0..=half).map(|t| (omega * t as f64).cos()));
        }
        KernelBank {
            window: hamming_symmetric(kernel_length),
            cos_table,
        }
    }

    fn build(&self, params: &SincFilterbankParams, i: usize) -> (FilterKernel, KernelCache) {
        let k = params.kernel_length;
        let half = k / 2;
        let (f1, f2, low_free, high_free) = params.cutoffs_with_flags(i);
        let windowed: Vec<f64> = raw_sinc_kernel(f1, f2, k)
            .iter()
            .zip(&self.window)
            .map(|(g, w)| g * w)
            .collect();
        // Zero-phase response: U(w) = u0 + 2 sum_{t>0} u_t cos(w t).
        let mut peak = -1.0;
        let mut peak_bin = 0;
        let mut peak_sign = 1.0;
        for j in 0..=PEAK_BINS {
            let row = &self.cos_table[j * (half + 1)..(j + 1) * (half + 1)];
            let resp = windowed[half] + 2.0 * dot(&windowed[half + 1..], &row[1..]);
            if resp.abs() > peak {
                peak = resp.abs();
                peak_bin = j;
                peak_sign = if resp < 0.0 { -1.0 } else { 1.0 };
            }
        }
        let scale = 1.0 / peak.max(PEAK_FLOOR);
        let taps = windowed.iter().map(|u| u * scale).collect();
        (
            FilterKernel { taps },
            KernelCache {
                f1,
                f2,
                low_free,
                high_free,
                windowed,
                peak,
                peak_omega: PI * peak_bin as f64 / PEAK_BINS as f64,
                peak_bin,
                peak_sign,
            },
        )
    }
}

fn materialize_with_cache(params: &SincFilterbankParams) -> Result<(Vec<FilterKernel>, Vec<KernelCache>)> {
    params.validate()?;
    let bank = KernelBank::new(params.kernel_length);
    Ok((0..params.filter_count()).map(|i| bank.build(params, i)).unzip())
}

/// Windowed, peak-normalized kernels, one per filter.
pub fn materialize_filters(params: &SincFilterbankParams) -> Result<Vec<FilterKernel>> {
    Ok(materialize_with_cache(params)?.0)
}

/// Back-propagates kernel-tap gradients into `(d theta_low, d theta_band)`.
fn kernel_backward(
    params: &SincFilterbankParams,
    i: usize,
    cache: &KernelCache,
    window: &[f64],
    dtaps: &[f64],
) -> (f64, f64) {
    let k = params.kernel_length;
    let half = (k / 2) as isize;
    let p = cache.peak.max(PEAK_FLOOR);
    let mut du: Vec<f64> = dtaps.iter().map(|d| d / p).collect();
    if cache.peak >= PEAK_FLOOR {
        let proj = dot(dtaps, &cache.windowed) / (p * p) * cache.peak_sign;
        for (idx, d) in du.iter_mut().enumerate() {
            let t = idx as isize - half;
            *d -= proj * (cache.peak_omega * t as f64).cos();
        }
    }
    let (mut df1, mut df2) = (0.0, 0.0);
    for (idx, (d, w)) in du.iter().zip(window).enumerate() {
        let t = (idx as isize - half) as f64;
        let dg = d * w;
        // d/df [2 f sinc(2 pi f t)] = 2 cos(2 pi f t), including t = 0.
        df1 -= dg * 2.0 * (2.0 * PI * cache.f1 * t).cos();
        df2 += dg * 2.0 * (2.0 * PI * cache.f2 * t).cos();
    }
    let sign = |x: f64| if x < 0.0 { -1.0 } else { 1.0 };
    let mut d_low_total = df1;
    let mut d_band = 0.0;
    if cache.high_free {
        d_low_total += df2;
        d_band = sign(params.theta_band.data()[i]) * df2;
    }
    let d_low = if cache.low_free {
        sign(params.theta_low.data()[i]) * d_low_total
    } else {
        0.0
    };
    (d_low, d_band)
}

/// Valid-mode filter outputs `y_i[n] = sum_j k_i[j] x[n + j]`, one row per filter.
pub fn filter_bank_outputs(wave: &Waveform, kernels: &[FilterKernel]) -> Result<Vec<Vec<f64>>> {
    let x = wave.samples();
    let mut out = Vec::with_capacity(kernels.len());
    for kern in kernels {
        let k = kern.len();
        if x.len() < k {
            return Err(MddError::Input(format!(
                "waveform has {} samples, shorter than the {k}-tap kernel",
                x.len()
            )));
        }
        out.push((0..=x.len() - k).map(|n| dot(&kern.taps, &x[n..n + k])).collect());
    }
    Ok(out)
}

/// Sinc layer followed by `|.|`, max-pooling, log compression and the conv stack.
#[derive(Debug, Clone, PartialEq)]
pub struct SincFrontend {
    pub filters: SincFilterbankParams,
    pub conv: ConvStack,
    pub cfg: FrontendConfig,
}

/// Forward-pass record for [`SincFrontend::backward`].
#[derive(Debug, Clone)]
pub struct SincCache {
    kernels: Vec<FilterKernel>,
    kernel_caches: Vec<KernelCache>,
    /// Per filter, per pooled frame: `(argmax sample, sign of y there, max |y|)`.
    pooled: Vec<Vec<(usize, f64, f64)>>,
    conv: ConvCache,
}

impl SincCache {
    pub fn kernels(&self) -> &[FilterKernel] {
        &self.kernels
    }

    /// Max-pooled `|y|` values before log compression, `[filter][frame]`.
    pub fn pooled_magnitudes(&self) -> Vec<Vec<f64>> {
        self.pooled
            .iter()
            .map(|f| f.iter().map(|p| p.2).collect())
            .collect()
    }

    /// Every discrete choice the forward pass made: pooled sample and sign,
    /// peak-gain bin per kernel, and the conv stack's branch pattern. The
    /// output is smooth in the parameters while this stays fixed.
    pub fn selection_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for f in &self.pooled {
            out.extend(f.iter().flat_map(|p| [p.0, usize::from(p.1 > 0.0)]));
        }
        out.extend(self.kernel_caches.iter().map(|c| c.peak_bin));
        self.conv.selection_pattern(&mut out);
        out
    }
}

impl SincFrontend {
    pub fn new<R: Rng + ?Sized>(filters: SincFilterbankParams, cfg: FrontendConfig, rng: &mut R) -> Result<Self> {
        filters.validate()?;
        cfg.validate()?;
        let conv = ConvStack::new(
            filters.filter_count(),
            &cfg.conv_layer_filters,
            &cfg.conv_kernel_sizes,
            &cfg.conv_pools,
            cfg.nonlinearity,
            rng,
        );
        Ok(SincFrontend { filters, conv, cfg })
    }

    pub fn output_dim(&self) -> usize {
        self.conv.output_dim().unwrap_or(self.filters.filter_count())
    }

    pub fn forward(&self, wave: &Waveform) -> Result<(FeatureSequence, SincCache)> {
        if wave.sample_rate_hz() != self.filters.sample_rate_hz {
            return Err(MddError::Input(format!(
                "waveform at {} Hz, filterbank expects {} Hz",
                wave.sample_rate_hz(),
                self.filters.sample_rate_hz
            )));
        }
        let k = self.filters.kernel_length;
        let x = wave.samples();
        if x.len() < k {
            return Err(MddError::Input(format!(
                "waveform has {} samples, shorter than the {k}-tap kernel",
                x.len()
            )));
        }
        let pool = self.cfg.sinc_pool;
        let frames = (x.len() - k + 1) / pool;
        if frames == 0 {
            return Err(MddError::Input(format!(
                "waveform of {} samples yields no pooled frame",
                x.len()
            )));
        }
        let (kernels, kernel_caches) = materialize_with_cache(&self.filters)?;
        let nf = kernels.len();
        let mut pooled = Vec::with_capacity(nf);
        let mut feat0 = Tensor::zeros(&[frames, nf]);
        for (i, kern) in kernels.iter().enumerate() {
            let mut rows = Vec::with_capacity(frames);
            for tau in 0..frames {
                let mut best = (tau * pool, 0.0, -1.0);
                for n in tau * pool..(tau + 1) * pool {
                    let y = dot(&kern.taps, &x[n..n + k]);
                    if y.abs() > best.2 {
                        let sign = if y > 0.0 { 1.0 } else if y < 0.0 { -1.0 } else { 0.0 };
                        best = (n, sign, y.abs());
                    }
                }
                feat0.row_mut(tau)[i] = (best.2 + self.cfg.log_offset).ln();
                rows.push(best);
            }
            pooled.push(rows);
        }
        if self.cfg.mean_normalize {
            center_columns(&mut feat0);
        }
        let rate = wave.sample_rate_hz() as f64 / pool as f64;
        let (out, conv) = self.conv.forward(&feat0)?;
        let total_pool: usize = self.cfg.conv_pools.iter().product();
        let feats = FeatureSequence::new(out, rate / total_pool as f64)?;
        Ok((
            feats,
            SincCache {
                kernels,
                kernel_caches,
                pooled,
                conv,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` given `d loss / d features`.
    pub fn backward(&self, wave: &Waveform, cache: &SincCache, dfeat: &Tensor, grads: &mut SincFrontend) -> Result<()> {
        let mut dfeat0 = self.conv.backward(&cache.conv, dfeat, &mut grads.conv)?;
        if self.cfg.mean_normalize {
            center_columns(&mut dfeat0);
        }
        let frames = cache.pooled.first().map_or(0, |r| r.len());
        if dfeat0.shape() != [frames, cache.pooled.len()] {
            return Err(MddError::Contract(format!(
                "upstream gradient shape {:?} does not match the sinc layer output [{frames}, {}]",
                dfeat0.shape(),
                cache.pooled.len()
            )));
        }
        let k = self.filters.kernel_length;
        let x = wave.samples();
        let window = hamming_symmetric(k);
        for (i, rows) in cache.pooled.iter().enumerate() {
            let mut dtaps = vec![0.0; k];
            for (tau, &(n, sign, m)) in rows.iter().enumerate() {
                let dm = dfeat0.row(tau)[i] / (m + self.cfg.log_offset);
                let dy = dm * sign;
                if dy == 0.0 {
                    continue;
                }
                for (d, xv) in dtaps.iter_mut().zip(&x[n..n + k]) {
                    *d += dy * xv;
                }
            }
            let (dl, db) = kernel_backward(&self.filters, i, &cache.kernel_caches[i], &window, &dtaps);
            grads.filters.theta_low.data_mut()[i] += dl;
            grads.filters.theta_band.data_mut()[i] += db;
        }
        Ok(())
    }
}

impl Params for SincFrontend {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![
            ("theta_low".to_string(), &self.filters.theta_low),
            ("theta_band".to_string(), &self.filters.theta_band),
        ];
        v.extend(prefixed("conv", self.conv.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = vec![
            ("theta_low".to_string(), &mut self.filters.theta_low),
            ("theta_band".to_string(), &mut self.filters.theta_band),
        ];
        v.extend(prefixed_mut("conv", self.conv.params_mut()));
        v
    }
}

/// Subtracts the column means of a `[T, C]` matrix. Centering is a symmetric
/// projection, so the same call maps output gradients to input gradients.
fn center_columns(m: &mut Tensor) {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    if rows == 0 {
        return;
    }
    let mut mean = vec![0.0; cols];
    for t in 0..rows {
        for (acc, v) in mean.iter_mut().zip(m.row(t)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= rows as f64);
    for t in 0..rows {
        for (v, mu) in m.row_mut(t).iter_mut().zip(&mean) {
            *v -= mu;
        }
    }
}

pub fn sinc_forward(wave: &Waveform, frontend: &SincFrontend) -> Result<(FeatureSequence, SincCache)> {
    frontend.forward(wave)
}

/// Gradients of the front-end parameters for upstream feature gradients `dfeat`.
pub fn sinc_backward(
    wave: &Waveform,
    frontend: &SincFrontend,
    cache: &SincCache,
    dfeat: &Tensor,
) -> Result<SincFrontend> {
    let mut grads = crate::tensor::zeros_like(frontend);
    frontend.backward(wave, cache, dfeat, &mut grads)?;
    Ok(grads)
}

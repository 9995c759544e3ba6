//! Log mel-filterbank (FBANK) features.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::sinc::{hz_to_mel, mel_to_hz};
use super::{FeatureSequence, Waveform};
use crate::error::{MddError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbankConfig {
    pub n_mels: usize,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub nfft: usize,
    /// Energies are floored here before the log.
    pub log_floor: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        FbankConfig {
            n_mels: 80,
            window_ms: 25.0,
            hop_ms: 10.0,
            nfft: 512,
            log_floor: 1e-10,
        }
    }
}

/// Precomputed window, FFT plan and triangular mel weights.
pub struct FbankExtractor {
    cfg: FbankConfig,
    sample_rate_hz: u32,
    window_len: usize,
    hop: usize,
    window: Vec<f64>,
    /// `[n_mels][nfft/2 + 1]`
    weights: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl FbankExtractor {
    pub fn new(cfg: FbankConfig, sample_rate_hz: u32) -> Result<Self> {
        let fs = sample_rate_hz as f64;
        let window_len = (cfg.window_ms * fs / 1000.0).round() as usize;
        let hop = (cfg.hop_ms * fs / 1000.0).round() as usize;
        if cfg.n_mels == 0 || window_len == 0 || hop == 0 {
            return Err(MddError::Config(format!("degenerate fbank config {cfg:?}")));
        }
        if cfg.nfft < window_len {
            return Err(MddError::Config(format!(
                "nfft {} shorter than the {window_len}-sample window",
                cfg.nfft
            )));
        }
        let window = (0..window_len)
            .map(|n| {
                if window_len == 1 {
                    1.0
                } else {
                    0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (window_len - 1) as f64).cos()
                }
            })
            .collect();
        let bins = cfg.nfft / 2 + 1;
        let edges: Vec<f64> = {
            let lo = hz_to_mel(0.0);
            let hi = hz_to_mel(fs / 2.0);
            (0..cfg.n_mels + 2)
                .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
                .collect()
        };
        let weights = (0..cfg.n_mels)
            .map(|m| {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..bins)
                    .map(|b| {
                        let f = b as f64 * fs / cfg.nfft as f64;
                        if f <= l || f >= r {
                            0.0
                        } else if f <= c {
                            (f - l) / (c - l)
                        } else {
                            (r - f) / (r - c)
                        }
                    })
                    .collect()
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(cfg.nfft);
        Ok(FbankExtractor {
            cfg,
            sample_rate_hz,
            window_len,
            hop,
            window,
            weights,
            fft,
        })
    }

    /// Number of frames for `n` samples: `floor((n - window) / hop) + 1`.
    pub fn num_frames(&self, n: usize) -> usize {
        if n < self.window_len {
            0
        } else {
            (n - self.window_len) / self.hop + 1
        }
    }

    /// Mel filter weights, one row per band over the `nfft/2 + 1` bins.
    pub fn mel_weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn compute(&self, wave: &Waveform) -> Result<FeatureSequence> {
        if wave.sample_rate_hz() != self.sample_rate_hz {
            return Err(MddError::Input(format!(
                "waveform at {} Hz, extractor configured for {} Hz",
                wave.sample_rate_hz(),
                self.sample_rate_hz
            )));
        }
        let x = wave.samples();
        let frames = self.num_frames(x.len());
        if frames == 0 {
            return Err(MddError::Input(format!(
                "waveform of {} samples is shorter than one {}-sample window",
                x.len(),
                self.window_len
            )));
        }
        let nfft = self.cfg.nfft;
        let bins = nfft / 2 + 1;
        let mut out = Tensor::zeros(&[frames, self.cfg.n_mels]);
        let mut buf = vec![Complex::new(0.0, 0.0); nfft];
        let mut power = vec![0.0; bins];
        for t in 0..frames {
            let start = t * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < self.window_len {
                    Complex::new(x[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, b) in power.iter_mut().zip(&buf) {
                *p = b.norm_sqr();
            }
            let row = out.row_mut(t);
            for (m, w) in self.weights.iter().enumerate() {
                let e: f64 = w.iter().zip(&power).map(|(a, b)| a * b).sum();
                row[m] = e.max(self.cfg.log_floor).ln();
            }
        }
        FeatureSequence::new(out, self.sample_rate_hz as f64 / self.hop as f64)
    }
}

/// Log mel-filterbank energies of `wave`.
pub fn fbank(wave: &Waveform, cfg: &FbankConfig) -> Result<FeatureSequence> {
    FbankExtractor::new(cfg.clone(), wave.sample_rate_hz())?.compute(wave)
}

/// Fixed per-dimension mean/variance normalization estimated on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Cmvn {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl Cmvn {
    pub fn identity(dim: usize) -> Self {
        Cmvn {
            mean: vec![0.0; dim],
            inv_std: vec![1.0; dim],
        }
    }

    pub fn estimate<'a>(feats: impl IntoIterator<Item = &'a FeatureSequence>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for f in feats {
            if sum.is_empty() {
                sum = vec![0.0; f.dim()];
                sq = vec![0.0; f.dim()];
            }
            for t in 0..f.num_frames() {
                for (d, v) in f.frame(t).iter().enumerate() {
                    sum[d] += v;
                    sq[d] += v * v;
                }
            }
            n += f.num_frames();
        }
        if n == 0 {
            return Err(MddError::Input("no frames to estimate normalization from".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let inv_std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| 1.0 / (s / n as f64 - m * m).max(1e-8).sqrt())
            .collect();
        Ok(Cmvn { mean, inv_std })
    }

    pub fn apply(&self, feats: &FeatureSequence) -> FeatureSequence {
        let mut frames = feats.frames.clone();
        let d = feats.dim();
        for (i, v) in frames.data_mut().iter_mut().enumerate() {
            let k = i % d;
            *v = (*v - self.mean[k]) * self.inv_std[k];
        }
        FeatureSequence {
            frames,
            frame_rate_hz: feats.frame_rate_hz,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(hz: f64, n: usize) -> Waveform {
        let s = (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * hz * i as f64 / 16000.0).sin())
            .collect();
        Waveform::new(s, 16000).unwrap()
    }

    #[test]
    fn one_second_gives_98_frames() {
        let f = fbank(&tone(440.0, 16000), &FbankConfig::default()).unwrap();
        assert_eq!(f.num_frames(), 98);
        assert_eq!(f.dim(), 80);
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let w = Waveform::new(vec![0.0; 4000], 16000).unwrap();
        let f = fbank(&w, &FbankConfig::default()).unwrap();
        let floor = 1e-10f64.ln();
        assert!(f.frames.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn shorter_than_window_is_an_input_error() {
        let w = Waveform::new(vec![0.0; 399], 16000).unwrap();
        assert!(matches!(fbank(&w, &FbankConfig::default()), Err(MddError::Input(_))));
    }

    #[test]
    fn cmvn_zeroes_mean() {
        let f = fbank(&tone(1000.0, 8000), &FbankConfig::default()).unwrap();
        let c = Cmvn::estimate([&f]).unwrap();
        let g = c.apply(&f);
        let col0: f64 = (0..g.num_frames()).map(|t| g.frame(t)[0]).sum::<f64>() / g.num_frames() as f64;
        assert!(col0.abs() < 1e-9);
    }
}

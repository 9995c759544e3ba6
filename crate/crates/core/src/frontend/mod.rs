//! Waveform front-ends: the learnable sinc filterbank with its small
//! convolution stack, the log-mel FBANK baseline, and filter-response
//! analysis/export.

mod conv;
mod fbank;
mod response;
mod sinc;

pub use conv::{ConvCache, ConvStack, Nonlinearity};
pub use fbank::{fbank, Cmvn, FbankConfig, FbankExtractor};
pub use response::{
    average_normalized_response, export_filters, ideal_frequency_response,
    measured_frequency_response, write_filter_csv,
};
pub use sinc::{
    filter_bank_outputs, hz_to_mel, materialize_filters, mel_to_hz, raw_sinc_kernel, sinc,
    sinc_backward, sinc_forward, FilterKernel, KernelCache, SincCache, SincFilterbankParams,
    SincFrontend,
};

use serde::{Deserialize, Serialize};

use crate::error::{MddError, Result};
use crate::tensor::Tensor;

pub const DEFAULT_SAMPLE_RATE_HZ: u32 = 16_000;

/// Mono audio with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(MddError::Input("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(MddError::Input("waveform is empty".into()));
        }
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(MddError::Input(format!(
                "sample {i} = {s} outside [-1, 1]"
            )));
        }
        Ok(Waveform {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// `T x D` frame-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Tensor,
    pub frame_rate_hz: f64,
}

impl FeatureSequence {
    pub fn new(frames: Tensor, frame_rate_hz: f64) -> Result<Self> {
        if frames.shape().len() != 2 || frames.shape()[0] == 0 {
            return Err(MddError::Input(format!(
                "feature matrix must be T x D with T >= 1, got {:?}",
                frames.shape()
            )));
        }
        if frames.data().iter().any(|x| !x.is_finite()) {
            return Err(MddError::Input("non-finite feature value".into()));
        }
        Ok(FeatureSequence {
            frames,
            frame_rate_hz,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.frames.row(t)
    }
}

/// Layout of everything after the sinc convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrontendConfig {
    /// Max-pool width (and stride) applied to `|sinc output|`, in samples.
    pub sinc_pool: usize,
    pub conv_layer_filters: Vec<usize>,
    pub conv_kernel_sizes: Vec<usize>,
    pub conv_pools: Vec<usize>,
    pub nonlinearity: Nonlinearity,
    /// Offset inside `log(|x| + offset)`.
    pub log_offset: f64,
    /// Subtract each channel's utterance mean from the log sinc outputs.
    pub mean_normalize: bool,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            sinc_pool: 160,
            conv_layer_filters: vec![128, 128],
            conv_kernel_sizes: vec![3, 3],
            conv_pools: vec![1, 1],
            nonlinearity: Nonlinearity::LeakyRelu,
            log_offset: 1e-6,
            mean_normalize: true,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sinc_pool == 0 {
            return Err(MddError::Config("sinc_pool must be >= 1".into()));
        }
        let n = self.conv_layer_filters.len();
        if self.conv_kernel_sizes.len() != n || self.conv_pools.len() != n {
            return Err(MddError::Config(format!(
                "conv stack lists disagree: {} filters, {} kernel sizes, {} pools",
                n,
                self.conv_kernel_sizes.len(),
                self.conv_pools.len()
            )));
        }
        if self.conv_pools.contains(&0) {
            return Err(MddError::Config("pooling factors must be >= 1".into()));
        }
        if self.conv_kernel_sizes.iter().any(|&k| k % 2 == 0) {
            return Err(MddError::Config(
                "same-padded conv kernels must have odd size".into(),
            ));
        }
        if self.conv_layer_filters.contains(&0) {
            return Err(MddError::Config("conv layers need >= 1 filter".into()));
        }
        if !(self.log_offset > 0.0) {
            return Err(MddError::Config("log offset must be positive".into()));
        }
        Ok(())
    }

    /// Frames produced for a waveform of `n` samples and kernel length `k`:
    /// `floor((n - k + 1) / sinc_pool)` followed by `floor(. / p)` per conv pool.
    pub fn output_frames(&self, n: usize, k: usize) -> usize {
        if n < k {
            return 0;
        }
        let mut t = (n - k + 1) / self.sinc_pool;
        for &p in &self.conv_pools {
            t /= p;
        }
        t
    }
}

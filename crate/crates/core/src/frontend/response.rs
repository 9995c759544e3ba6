//! Frequency-response analysis of learned filters and CSV export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::sinc::{materialize_filters, FilterKernel, SincFilterbankParams};
use crate::error::{MddError, Result};

/// Ideal rectangular bandpass magnitude: 1 inside `(f1, f2)`, 0 outside,
/// 0.5 exactly on either edge.
pub fn ideal_frequency_response(f1: f64, f2: f64, f: f64) -> Result<f64> {
    if f < 0.0 || f.is_nan() {
        return Err(MddError::Domain(format!("frequency {f} Hz is negative")));
    }
    if !(0.0 <= f1 && f1 <= f2) {
        return Err(MddError::Domain(format!("invalid band ({f1}, {f2})")));
    }
    Ok(if f == f1 || f == f2 {
        0.5
    } else if f > f1 && f < f2 {
        1.0
    } else {
        0.0
    })
}

/// `|DFT|` of the zero-padded kernel on the `nfft/2 + 1` non-negative bins,
/// as `(freq_hz, magnitude)` pairs.
pub fn measured_frequency_response(kernel: &FilterKernel, nfft: usize, sample_rate_hz: u32) -> Result<Vec<(f64, f64)>> {
    if nfft < kernel.len() || nfft == 0 {
        return Err(MddError::Contract(format!(
            "nfft {nfft} shorter than the {}-tap kernel",
            kernel.len()
        )));
    }
    let mut buf: Vec<Complex<f64>> = kernel
        .taps
        .iter()
        .map(|&t| Complex::new(t, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(nfft)
        .collect();
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let fs = sample_rate_hz as f64;
    Ok(buf[..nfft / 2 + 1]
        .iter()
        .enumerate()
        .map(|(b, c)| (b as f64 * fs / nfft as f64, c.norm()))
        .collect())
}

/// Mean magnitude across filters, rescaled so its maximum is 1 (left at
/// zero when every response is zero).
pub fn average_normalized_response(responses: &[Vec<(f64, f64)>]) -> Vec<(f64, f64)> {
    let Some(first) = responses.first() else {
        return Vec::new();
    };
    let n = responses.len() as f64;
    let mut avg: Vec<(f64, f64)> = first
        .iter()
        .enumerate()
        .map(|(b, &(f, _))| (f, responses.iter().map(|r| r[b].1).sum::<f64>() / n))
        .collect();
    let max = avg.iter().map(|p| p.1).fold(0.0, f64::max);
    if max > 0.0 {
        avg.iter_mut().for_each(|p| p.1 /= max);
    }
    avg
}

/// Writes `filter_id,freq_hz,magnitude` rows for each filter followed by the
/// normalized average response under `filter_id = -1`.
pub fn write_filter_csv<W: Write>(out: &mut W, responses: &[Vec<(f64, f64)>]) -> std::io::Result<()> {
    writeln!(out, "filter_id,freq_hz,magnitude")?;
    for (i, r) in responses.iter().enumerate() {
        for (f, m) in r {
            writeln!(out, "{i},{f},{m}")?;
        }
    }
    for (f, m) in average_normalized_response(responses) {
        writeln!(out, "-1,{f},{m}")?;
    }
    Ok(())
}

/// Materializes every filter of `params` and exports its measured response.
pub fn export_filters(params: &SincFilterbankParams, path: &Path, nfft: usize) -> Result<()> {
    let kernels = materialize_filters(params)?;
    let responses = kernels
        .iter()
        .map(|k| measured_frequency_response(k, nfft, params.sample_rate_hz))
        .collect::<Result<Vec<_>>>()?;
    let file = File::create(path).map_err(|e| MddError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_filter_csv(&mut w, &responses)
        .and_then(|_| w.flush())
        .map_err(|e| MddError::io(path, e))
}

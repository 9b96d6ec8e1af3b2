//! Signal-processing primitives: zero-phase Butterworth bandpass,
//! plain decimation, gammatone filterbank envelope extraction, and
//! per-trial standardization.

mod butter;
mod gammatone;

pub use butter::{butter_bandpass_zero_phase, design_bandpass, BandpassSpec, Sos};
pub use gammatone::{gammatone_envelope, subband_envelope_sum, GammatoneBankSpec};

use ndarray::{Array2, Axis};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("signal too short: {len} samples, need more than {min}")]
    SignalTooShort { len: usize, min: usize },
    #[error("invalid band [{low_hz}, {high_hz}] Hz at fs {fs_hz} Hz: need 0 < low < high < fs/2")]
    InvalidBand { low_hz: f64, high_hz: f64, fs_hz: f64 },
    #[error("filter design is unstable (pole magnitude {magnitude} outside unit circle)")]
    UnstableFilter { magnitude: f64 },
    #[error(
        "non-integer decimation ratio {fs_in}/{fs_out} Hz; resample the recording at ingestion"
    )]
    NonIntegerRatio { fs_in: f64, fs_out: f64 },
    #[error("decimation factor must be >= 1")]
    ZeroDecimation,
    #[error("sample rate {fs_hz} Hz too low: need at least {min_hz} Hz")]
    SampleRateTooLow { fs_hz: f64, min_hz: f64 },
    #[error("cannot standardize a constant signal")]
    ConstantInput,
    #[error("invalid filterbank spec: {0}")]
    InvalidSpec(String),
}

/// Keeps every `factor`-th sample, starting at index 0. No anti-aliasing
/// filter is applied; callers are expected to have band-limited the input.
pub fn decimate(x: &[f64], factor: usize) -> Result<Vec<f64>, DspError> {
    if factor == 0 {
        return Err(DspError::ZeroDecimation);
    }
    Ok(x.iter().step_by(factor).copied().collect())
}

/// Row-wise decimation of a time x channels matrix.
pub fn decimate_rows(x: &Array2<f64>, factor: usize) -> Result<Array2<f64>, DspError> {
    if factor == 0 {
        return Err(DspError::ZeroDecimation);
    }
    let rows: Vec<_> = (0..x.nrows()).step_by(factor).collect();
    Ok(x.select(Axis(0), &rows))
}

/// Integer decimation factor between two rates, or an error if the ratio
/// is not an integer.
pub fn decimation_factor(fs_in: f64, fs_out: f64) -> Result<usize, DspError> {
    if fs_in <= 0.0 || fs_out <= 0.0 || fs_out > fs_in {
        return Err(DspError::NonIntegerRatio { fs_in, fs_out });
    }
    let ratio = fs_in / fs_out;
    let rounded = ratio.round();
    if (ratio - rounded).abs() > 1e-9 * ratio.max(1.0) {
        return Err(DspError::NonIntegerRatio { fs_in, fs_out });
    }
    Ok(rounded as usize)
}

/// Centers and scales to unit sample variance (n-1 convention).
pub fn standardize(x: &[f64]) -> Result<Vec<f64>, DspError> {
    if x.len() < 2 {
        return Err(DspError::SignalTooShort {
            len: x.len(),
            min: 1,
        });
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(DspError::ConstantInput);
    }
    let sd = var.sqrt();
    Ok(x.iter().map(|v| (v - mean) / sd).collect())
}

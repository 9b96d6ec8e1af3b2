//! Backward stimulus-reconstruction decoder.
//!
//! EEG is expanded into a block-Hankel design matrix (one block of `L`
//! forward time lags per channel), a spatio-temporal filter is fit by
//! regularized least squares with the analytical Ledoit-Wolf shrinkage
//! estimator in place of a cross-validated ridge parameter, and attention
//! is decided per window by which competing envelope correlates better
//! with the reconstruction.

mod serialize;

pub use serialize::{load_decoder, save_decoder};

use crate::corpus::ChannelId;
use crate::linalg;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("trial too short: {n_samples} samples for {n_taps} lags")]
    TooShort { n_samples: usize, n_taps: usize },
    #[error("invalid lag grid: {0}")]
    InvalidLagGrid(String),
    #[error(
        "regularized system is singular; raise the shrinkage floor or remove dead channels: {0}"
    )]
    Singular(String),
    #[error("dimension mismatch: decoder expects {expected_channels} channels x {expected_taps} lags = {expected} columns, got {got}")]
    DimensionMismatch {
        expected_channels: usize,
        expected_taps: usize,
        expected: usize,
        got: usize,
    },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("invalid decision window: {0}")]
    InvalidWindow(String),
    #[error("empty training accumulator")]
    NoTrainingData,
    #[error("decoder file invalid: {0}")]
    BadFile(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Forward lag grid of the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagGrid {
    pub fs_hz: f64,
    pub span_ms: (f64, f64),
    pub n_taps: usize,
}

impl LagGrid {
    /// Lags start at the current sample (span must start at 0 ms) and
    /// extend forward; `n_taps = floor(span_hi * fs / 1000) + 1`.
    pub fn new(fs_hz: f64, span_ms: (f64, f64)) -> Result<Self, DecoderError> {
        if span_ms.0 != 0.0 || span_ms.1 < 0.0 {
            return Err(DecoderError::InvalidLagGrid(format!(
                "lag span must start at 0 ms and be nonnegative, got [{}, {}]",
                span_ms.0, span_ms.1
            )));
        }
        if fs_hz <= 0.0 {
            return Err(DecoderError::InvalidLagGrid("fs must be positive".into()));
        }
        let n_taps = (span_ms.1 * fs_hz / 1000.0).floor() as usize + 1;
        Ok(Self {
            fs_hz,
            span_ms,
            n_taps,
        })
    }

    /// The 0-400 ms grid at 20 Hz (9 taps).
    pub fn standard() -> Self {
        Self::new(20.0, (0.0, 400.0)).expect("standard grid is valid")
    }
}

/// Ledoit-Wolf shrinkage parameters: convex weight `rho` toward the
/// scaled-identity target `mu * I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shrinkage {
    pub rho: f64,
    pub mu: f64,
}

/// Trained spatio-temporal filter.
#[derive(Debug, Clone)]
pub struct Decoder {
    /// Length `channels.len() * lag_grid.n_taps`, channel-block order.
    pub weights: Array1<f64>,
    pub channels: Vec<ChannelId>,
    pub lag_grid: LagGrid,
    pub shrinkage: Shrinkage,
}

/// Expands a time x channels matrix into the block-Hankel design matrix.
/// Block `c` holds columns `[x_c(t), x_c(t+1), ..., x_c(t+L-1)]`; rows past
/// the trial end are zero-padded (the last `L-1` rows of each block).
pub fn build_lagged(eeg: &Array2<f64>, grid: &LagGrid) -> Result<Array2<f64>, DecoderError> {
    let (t_len, n_ch) = eeg.dim();
    let l = grid.n_taps;
    if t_len < l {
        return Err(DecoderError::TooShort {
            n_samples: t_len,
            n_taps: l,
        });
    }
    let mut out = Array2::<f64>::zeros((t_len, n_ch * l));
    for c in 0..n_ch {
        let col = eeg.column(c);
        for lag in 0..l {
            let dst = c * l + lag;
            for t in 0..(t_len - lag) {
                out[[t, dst]] = col[t + lag];
            }
        }
    }
    Ok(out)
}

/// Analytical Ledoit-Wolf shrinkage toward the scaled identity, computed
/// from the uncentered second-moment matrix `S = XᵀX / T`:
/// `mu = trace(S)/p` and
/// `rho = min(1, (sum_t ||x_t x_tᵀ - S||_F² / T²) / ||S - mu I||_F²)`.
pub fn ledoit_wolf(x: &Array2<f64>) -> Result<Shrinkage, DecoderError> {
    let (t_len, p) = x.dim();
    if t_len < 2 {
        return Err(DecoderError::TooShort {
            n_samples: t_len,
            n_taps: 2,
        });
    }
    let gram = x.t().dot(x);
    let sum_norm4 = x
        .rows()
        .into_iter()
        .map(|row| {
            let n2: f64 = row.iter().map(|v| v * v).sum();
            n2 * n2
        })
        .sum::<f64>();
    Ok(shrinkage_from_moments(&gram, sum_norm4, t_len, p))
}

/// Shrinkage from accumulated moments: `gram = sum_t x_t x_tᵀ`,
/// `sum_norm4 = sum_t ||x_t||⁴`, over `n` samples.
fn shrinkage_from_moments(gram: &Array2<f64>, sum_norm4: f64, n: usize, p: usize) -> Shrinkage {
    let t = n as f64;
    let s = gram / t;
    let mu = (0..p).map(|i| s[[i, i]]).sum::<f64>() / p as f64;
    // sum_t ||x_t x_tᵀ - S||² = sum_t ||x_t||⁴ - T ||S||²
    let s_norm2 = s.iter().map(|v| v * v).sum::<f64>();
    let numerator = (sum_norm4 - t * s_norm2) / (t * t);
    // ||S - mu I||² = ||S||² - 2 mu tr(S) + p mu² = ||S||² - p mu²
    let denominator = s_norm2 - p as f64 * mu * mu;
    let rho = if denominator <= 0.0 || !denominator.is_finite() {
        1.0
    } else {
        (numerator / denominator).clamp(0.0, 1.0)
    };
    Shrinkage { rho, mu }
}

/// Accumulates per-trial sufficient statistics for pooled training:
/// the Gram matrix, the cross term, and the fourth-moment sum that the
/// shrinkage estimator needs. Accumulators built in parallel can be
/// merged in deterministic order.
#[derive(Debug, Clone)]
pub struct TrainAccumulator {
    gram: Array2<f64>,
    xty: Array1<f64>,
    sum_norm4: f64,
    n_samples: usize,
}

impl TrainAccumulator {
    pub fn new(p: usize) -> Self {
        Self {
            gram: Array2::zeros((p, p)),
            xty: Array1::zeros(p),
            sum_norm4: 0.0,
            n_samples: 0,
        }
    }

    pub fn p(&self) -> usize {
        self.xty.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Adds one trial's lagged design matrix and (standardized) target.
    pub fn add_trial(&mut self, x_lagged: &Array2<f64>, s: &Array1<f64>) -> Result<(), DecoderError> {
        let p = self.p();
        if x_lagged.ncols() != p {
            return Err(DecoderError::DimensionMismatch {
                expected_channels: 0,
                expected_taps: 0,
                expected: p,
                got: x_lagged.ncols(),
            });
        }
        if x_lagged.nrows() != s.len() {
            return Err(DecoderError::NumericalFailure(format!(
                "design has {} rows but target has {} samples",
                x_lagged.nrows(),
                s.len()
            )));
        }
        self.gram = &self.gram + &x_lagged.t().dot(x_lagged);
        self.xty = &self.xty + &x_lagged.t().dot(s);
        self.sum_norm4 += x_lagged
            .rows()
            .into_iter()
            .map(|row| {
                let n2: f64 = row.iter().map(|v| v * v).sum();
                n2 * n2
            })
            .sum::<f64>();
        self.n_samples += x_lagged.nrows();
        Ok(())
    }

    pub fn merge(&mut self, other: &TrainAccumulator) {
        self.gram = &self.gram + &other.gram;
        self.xty = &self.xty + &other.xty;
        self.sum_norm4 += other.sum_norm4;
        self.n_samples += other.n_samples;
    }

    /// Columns with any signal in them. All-zero (dead) columns, e.g.
    /// removed channels that were zero-filled, are excluded from the
    /// shrinkage estimate and from the solve; their weights are pinned to
    /// zero, so augmenting the data with dead channels cannot change the
    /// reconstruction.
    fn live_columns(&self) -> Vec<usize> {
        (0..self.p()).filter(|&i| self.gram[[i, i]] > 0.0).collect()
    }

    /// Ledoit-Wolf parameters of the pooled data (dead columns excluded).
    pub fn shrinkage(&self) -> Result<Shrinkage, DecoderError> {
        if self.n_samples < 2 {
            return Err(DecoderError::NoTrainingData);
        }
        let live = self.live_columns();
        if live.is_empty() {
            return Err(DecoderError::NoTrainingData);
        }
        Ok(shrinkage_from_moments(
            &self.gram,
            self.sum_norm4,
            self.n_samples,
            live.len(),
        ))
    }

    /// Solves `((1-rho) S + rho mu I) d = Xᵀs / T` with the estimated
    /// shrinkage.
    pub fn finish(
        &self,
        channels: Vec<ChannelId>,
        lag_grid: LagGrid,
    ) -> Result<Decoder, DecoderError> {
        let shrinkage = self.shrinkage()?;
        self.finish_with(channels, lag_grid, shrinkage)
    }

    /// Same solve with caller-supplied shrinkage parameters.
    pub fn finish_with(
        &self,
        channels: Vec<ChannelId>,
        lag_grid: LagGrid,
        shrinkage: Shrinkage,
    ) -> Result<Decoder, DecoderError> {
        if self.n_samples < 2 {
            return Err(DecoderError::NoTrainingData);
        }
        let p = self.p();
        if channels.len() * lag_grid.n_taps != p {
            return Err(DecoderError::DimensionMismatch {
                expected_channels: channels.len(),
                expected_taps: lag_grid.n_taps,
                expected: channels.len() * lag_grid.n_taps,
                got: p,
            });
        }
        let live = self.live_columns();
        if live.is_empty() {
            return Err(DecoderError::NoTrainingData);
        }
        let t = self.n_samples as f64;
        let q = live.len();
        let mut a = Array2::<f64>::zeros((q, q));
        for (ri, &i) in live.iter().enumerate() {
            for (rj, &j) in live.iter().enumerate() {
                a[[ri, rj]] = self.gram[[i, j]] * (1.0 - shrinkage.rho) / t;
            }
            a[[ri, ri]] += shrinkage.rho * shrinkage.mu;
        }
        let b = Array1::from_iter(live.iter().map(|&i| self.xty[i] / t));
        let solved =
            linalg::solve_spd(&a, &b).map_err(|e| DecoderError::Singular(e.to_string()))?;
        // solver postcondition: small relative residual
        let residual = (&a.dot(&solved) - &b).mapv(|v| v * v).sum().sqrt();
        let b_norm = b.mapv(|v| v * v).sum().sqrt();
        if residual > 1e-8 * b_norm.max(1e-300) {
            return Err(DecoderError::NumericalFailure(format!(
                "normal-equation residual {residual:.3e} exceeds tolerance (rhs norm {b_norm:.3e})"
            )));
        }
        let mut weights = Array1::<f64>::zeros(p);
        for (ri, &i) in live.iter().enumerate() {
            weights[i] = solved[ri];
        }
        Ok(Decoder {
            weights,
            channels,
            lag_grid,
            shrinkage,
        })
    }
}

/// One-shot training on a single design matrix.
pub fn train(
    x_lagged: &Array2<f64>,
    s: &Array1<f64>,
    channels: Vec<ChannelId>,
    lag_grid: LagGrid,
) -> Result<Decoder, DecoderError> {
    let mut acc = TrainAccumulator::new(x_lagged.ncols());
    acc.add_trial(x_lagged, s)?;
    acc.finish(channels, lag_grid)
}

/// Applies the decoder: `s_hat = X d`.
pub fn reconstruct(decoder: &Decoder, x_lagged: &Array2<f64>) -> Result<Array1<f64>, DecoderError> {
    let expected = decoder.weights.len();
    if x_lagged.ncols() != expected {
        return Err(DecoderError::DimensionMismatch {
            expected_channels: decoder.channels.len(),
            expected_taps: decoder.lag_grid.n_taps,
            expected,
            got: x_lagged.ncols(),
        });
    }
    Ok(x_lagged.dot(&decoder.weights))
}

/// Which competing stream a decision picked (1 = left, 2 = right).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Speaker {
    One,
    Two,
}

/// One attention decision on a single window.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Decision {
    pub window_index: usize,
    pub corr_1: f64,
    pub corr_2: f64,
    pub chosen: Speaker,
    pub correct: bool,
    /// Set when the reconstruction was constant in this window and the
    /// tie rule decided.
    pub degenerate: bool,
}

/// Splits the trial into non-overlapping windows of `window_s` seconds
/// and decides per window which stream's envelope the reconstruction
/// tracks. The final partial window is discarded. Exact correlation ties
/// go to speaker 1.
pub fn classify_windows(
    decoder: &Decoder,
    eeg: &Array2<f64>,
    envelope_1: &Array1<f64>,
    envelope_2: &Array1<f64>,
    attended: Speaker,
    window_s: f64,
) -> Result<Vec<Decision>, DecoderError> {
    if window_s <= 0.0 {
        return Err(DecoderError::InvalidWindow(format!(
            "window length {window_s} s must be positive"
        )));
    }
    let x = build_lagged(eeg, &decoder.lag_grid)?;
    let s_hat = reconstruct(decoder, &x)?;
    let n = s_hat
        .len()
        .min(envelope_1.len())
        .min(envelope_2.len());
    let win = (window_s * decoder.lag_grid.fs_hz).round() as usize;
    if win < 2 {
        return Err(DecoderError::InvalidWindow(format!(
            "window of {window_s} s holds fewer than 2 samples at {} Hz",
            decoder.lag_grid.fs_hz
        )));
    }
    let n_windows = n / win;
    let mut decisions = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let range = w * win..(w + 1) * win;
        let sw = &s_hat.as_slice().unwrap()[range.clone()];
        let e1 = &envelope_1.as_slice().unwrap()[range.clone()];
        let e2 = &envelope_2.as_slice().unwrap()[range];
        let mean = sw.iter().sum::<f64>() / win as f64;
        let var = sw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        let degenerate = var <= 0.0;
        let corr_1 = linalg::pearson(sw, e1);
        let corr_2 = linalg::pearson(sw, e2);
        let chosen = if corr_1 >= corr_2 {
            Speaker::One
        } else {
            Speaker::Two
        };
        decisions.push(Decision {
            window_index: w,
            corr_1,
            corr_2,
            chosen,
            correct: chosen == attended,
            degenerate,
        });
    }
    Ok(decisions)
}

/// Fraction of correct decisions.
pub fn accuracy(decisions: &[Decision]) -> f64 {
    if decisions.is_empty() {
        return f64::NAN;
    }
    decisions.iter().filter(|d| d.correct).count() as f64 / decisions.len() as f64
}

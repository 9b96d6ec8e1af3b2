//! Synthetic forward-model generator.
//!
//! EEG is synthesized as lagged convolutions of the two competing
//! envelopes with per-channel kernels plus seeded Gaussian noise:
//!
//! ```text
//! eeg(t, c) = sum_l k_att(c, l) s_att(t + l)
//!           + alpha * sum_l k_un(c, l) s_un(t + l)
//!           + sigma * n(t, c)
//! ```
//!
//! with samples past the trial end treated as zero, matching the lagged
//! design matrix built by the decoder. Everything is a pure function of
//! the spec and inputs, so fixed seeds reproduce bit-identical trials.

use super::{Condition, CorpusError, Montage, Recording, Side, Trial};
use crate::dsp;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

/// Envelope rate everything downstream runs at.
pub const ENVELOPE_RATE_HZ: f64 = 20.0;

/// Gain applied to the carrier channel in [`SynthSpec::planted`].
pub const PLANTED_CHANNEL_GAIN: f64 = 1.0;

/// Forward-model description: per-channel impulse responses over the
/// decoder lag grid for the attended and unattended stream, the
/// unattended gain, the noise level, and the noise seed.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_channels: usize,
    /// channels x lags
    pub kernels_attended: Array2<f64>,
    /// channels x lags
    pub kernels_unattended: Array2<f64>,
    /// alpha in [0, 1]
    pub unattended_gain: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.kernels_attended.nrows() != self.n_channels
            || self.kernels_unattended.nrows() != self.n_channels
        {
            return Err(CorpusError::BadSynthSpec(format!(
                "kernel rows ({}, {}) must equal n_channels ({})",
                self.kernels_attended.nrows(),
                self.kernels_unattended.nrows(),
                self.n_channels
            )));
        }
        if self.kernels_attended.ncols() != self.kernels_unattended.ncols() {
            return Err(CorpusError::BadSynthSpec(
                "attended and unattended kernels must share the lag count".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.unattended_gain) {
            return Err(CorpusError::BadSynthSpec(format!(
                "unattended gain {} outside [0, 1]",
                self.unattended_gain
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(CorpusError::BadSynthSpec("noise sigma negative".into()));
        }
        Ok(())
    }

    pub fn n_lags(&self) -> usize {
        self.kernels_attended.ncols()
    }

    /// A spec on which exact stimulus reconstruction is possible.
    ///
    /// Channels come in pairs sharing their unattended kernel; the first
    /// pair's attended kernels differ by a unit impulse at lag zero, so
    /// the difference of those two channels equals the attended envelope.
    /// All channels share dominant base kernels, keeping them mutually
    /// correlated the way real EEG channels are.
    pub fn correlated_pairs(
        n_pairs: usize,
        n_lags: usize,
        unattended_gain: f64,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self, CorpusError> {
        if n_pairs == 0 || n_lags == 0 {
            return Err(CorpusError::BadSynthSpec(
                "need at least one pair and one lag".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xC0FFEE));
        let scale = 1.0 / (n_lags as f64).sqrt();
        let mut draw_kernel = |s: f64| -> Vec<f64> {
            (0..n_lags)
                .map(|_| s * scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let base_att = draw_kernel(1.0);
        let base_un = draw_kernel(1.0);

        let n_channels = 2 * n_pairs;
        let mut k_att = Array2::<f64>::zeros((n_channels, n_lags));
        let mut k_un = Array2::<f64>::zeros((n_channels, n_lags));
        for pair in 0..n_pairs {
            let wobble_att = draw_kernel(0.15);
            let wobble_un = draw_kernel(0.15);
            let split: Vec<f64> = if pair == 0 {
                let mut v = vec![0.0; n_lags];
                v[0] = 1.0;
                v
            } else {
                draw_kernel(0.15)
            };
            for l in 0..n_lags {
                let att = base_att[l] + wobble_att[l];
                let un = base_un[l] + wobble_un[l];
                k_att[[2 * pair, l]] = att;
                k_att[[2 * pair + 1, l]] = att - split[l];
                k_un[[2 * pair, l]] = un;
                k_un[[2 * pair + 1, l]] = un;
            }
        }
        let spec = Self {
            n_channels,
            kernels_attended: k_att,
            kernels_unattended: k_un,
            unattended_gain,
            noise_sigma,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A spec where exactly one channel carries the attended stream (as a
    /// unit impulse at lag zero) and every other channel is pure noise.
    pub fn planted(
        n_channels: usize,
        n_lags: usize,
        carrier_channel: usize,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self, CorpusError> {
        if carrier_channel >= n_channels {
            return Err(CorpusError::BadSynthSpec(format!(
                "carrier channel {carrier_channel} outside 0..{n_channels}"
            )));
        }
        let mut k_att = Array2::<f64>::zeros((n_channels, n_lags));
        k_att[[carrier_channel, 0]] = PLANTED_CHANNEL_GAIN;
        let spec = Self {
            n_channels,
            kernels_attended: k_att,
            kernels_unattended: Array2::zeros((n_channels, n_lags)),
            unattended_gain: 0.0,
            noise_sigma,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A spec with all-zero kernels: the EEG is pure noise, uncoupled
    /// from either stream. Used for chance-level controls.
    pub fn pure_noise(n_channels: usize, n_lags: usize, seed: u64) -> Self {
        Self {
            n_channels,
            kernels_attended: Array2::zeros((n_channels, n_lags)),
            kernels_unattended: Array2::zeros((n_channels, n_lags)),
            unattended_gain: 0.0,
            noise_sigma: 1.0,
            seed,
        }
    }

    /// Same spec with every kernel negated (inverted coupling sign).
    pub fn inverted(&self) -> Self {
        Self {
            kernels_attended: -&self.kernels_attended,
            kernels_unattended: -&self.kernels_unattended,
            ..self.clone()
        }
    }
}

/// SplitMix64 step, used to derive independent sub-seeds.
pub(crate) fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Band-limited standardized test envelope at 20 Hz: a sum of cosines
/// between 2.0 and 5.5 Hz with seeded random phases. The band sits well
/// inside the 1-9 Hz passband, so the preprocessing filter is close to
/// transparent on it.
pub fn synthetic_envelope(n_samples: usize, seed: u64) -> Array1<f64> {
    const N_COMPONENTS: usize = 60;
    const F_LO: f64 = 2.0;
    const F_HI: f64 = 5.5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f64> = (0..N_COMPONENTS)
        .map(|_| rng.gen_range(0.0..(2.0 * PI)))
        .collect();
    let mut env = vec![0.0; n_samples];
    for (j, phase) in phases.iter().enumerate() {
        let f = F_LO + (F_HI - F_LO) * j as f64 / (N_COMPONENTS - 1) as f64;
        for (t, v) in env.iter_mut().enumerate() {
            *v += (2.0 * PI * f * t as f64 / ENVELOPE_RATE_HZ + phase).cos();
        }
    }
    let standardized = dsp::standardize(&env).expect("cosine sum is non-constant");
    Array1::from_vec(standardized)
}

/// Builds one synthetic trial from the forward model.
pub fn generate_synthetic(
    spec: &SynthSpec,
    attended_envelope: &Array1<f64>,
    unattended_envelope: &Array1<f64>,
    attended_side: Side,
) -> Result<Trial, CorpusError> {
    spec.validate()?;
    if attended_envelope.len() != unattended_envelope.len() {
        return Err(CorpusError::BadSynthSpec(format!(
            "envelope lengths differ: {} vs {}",
            attended_envelope.len(),
            unattended_envelope.len()
        )));
    }
    let n = attended_envelope.len();
    let n_lags = spec.n_lags();
    let mut eeg = Array2::<f64>::zeros((n, spec.n_channels));
    for c in 0..spec.n_channels {
        for t in 0..n {
            let mut acc = 0.0;
            let max_l = n_lags.min(n - t);
            for l in 0..max_l {
                acc += spec.kernels_attended[[c, l]] * attended_envelope[t + l]
                    + spec.unattended_gain
                        * spec.kernels_unattended[[c, l]]
                        * unattended_envelope[t + l];
            }
            eeg[[t, c]] = acc;
        }
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for t in 0..n {
            for c in 0..spec.n_channels {
                eeg[[t, c]] += spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    Ok(Trial {
        eeg,
        sample_rate_hz: ENVELOPE_RATE_HZ,
        attended_envelope: attended_envelope.clone(),
        unattended_envelope: unattended_envelope.clone(),
        attended_side,
        condition: Condition::Fixation,
    })
}

/// Builds a six-trial recording with balanced sides and conditions.
/// Envelopes and per-trial noise seeds are derived from `base_seed` and
/// the trial index.
pub fn synthetic_recording(
    participant_id: &str,
    spec: &SynthSpec,
    samples_per_trial: usize,
    base_seed: u64,
) -> Result<Recording, CorpusError> {
    let sides = [
        Side::Left,
        Side::Right,
        Side::Left,
        Side::Right,
        Side::Left,
        Side::Right,
    ];
    let conditions = [
        Condition::Video,
        Condition::Fixation,
        Condition::Video,
        Condition::Fixation,
        Condition::Video,
        Condition::Fixation,
    ];
    let mut trials = Vec::with_capacity(6);
    for k in 0..6 {
        let att = synthetic_envelope(samples_per_trial, derive_seed(base_seed, 2 * k));
        let un = synthetic_envelope(samples_per_trial, derive_seed(base_seed, 2 * k + 1));
        let trial_spec = SynthSpec {
            seed: derive_seed(spec.seed, 0x7171 + k),
            ..spec.clone()
        };
        let mut trial = generate_synthetic(&trial_spec, &att, &un, sides[k as usize])?;
        trial.condition = conditions[k as usize];
        trials.push(trial);
    }
    let recording = Recording {
        participant_id: participant_id.to_string(),
        montage: Montage::synthetic(spec.n_channels),
        sample_rate_hz: ENVELOPE_RATE_HZ,
        trials,
    };
    recording.validate()?;
    Ok(recording)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_kernel_copies_the_attended_envelope() {
        // sigma = 0, alpha = 0, unit impulse at lag 0 on channel 0
        let mut k_att = Array2::<f64>::zeros((2, 4));
        k_att[[0, 0]] = 1.0;
        let spec = SynthSpec {
            n_channels: 2,
            kernels_attended: k_att,
            kernels_unattended: Array2::zeros((2, 4)),
            unattended_gain: 0.0,
            noise_sigma: 0.0,
            seed: 0,
        };
        let att = synthetic_envelope(200, 1);
        let un = synthetic_envelope(200, 2);
        let trial = generate_synthetic(&spec, &att, &un, Side::Left).unwrap();
        for t in 0..200 {
            assert_relative_eq!(trial.eeg[[t, 0]], att[t], epsilon = 1e-15);
            assert_eq!(trial.eeg[[t, 1]], 0.0);
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let spec = SynthSpec::correlated_pairs(2, 9, 0.5, 0.7, 99).unwrap();
        let att = synthetic_envelope(300, 5);
        let un = synthetic_envelope(300, 6);
        let a = generate_synthetic(&spec, &att, &un, Side::Left).unwrap();
        let b = generate_synthetic(&spec, &att, &un, Side::Left).unwrap();
        assert_eq!(a.eeg, b.eeg);
    }

    #[test]
    fn noise_free_eeg_lies_in_the_lagged_envelope_span() {
        // every channel must be an exact linear combination of lagged
        // envelope regressors: the least-squares residual is ~0
        let spec = SynthSpec::correlated_pairs(2, 5, 0.5, 0.0, 3).unwrap();
        let n = 400;
        let att = synthetic_envelope(n, 21);
        let un = synthetic_envelope(n, 22);
        let trial = generate_synthetic(&spec, &att, &un, Side::Right).unwrap();

        // regressors: lagged copies (zero-padded forward shifts)
        let l = spec.n_lags();
        let p = 2 * l;
        let mut design = Array2::<f64>::zeros((n, p));
        for lag in 0..l {
            for t in 0..n {
                if t + lag < n {
                    design[[t, lag]] = att[t + lag];
                    design[[t, l + lag]] = spec.unattended_gain * un[t + lag];
                }
            }
        }
        let gram = design.t().dot(&design);
        for c in 0..spec.n_channels {
            let target = trial.eeg.column(c).to_owned();
            let rhs = design.t().dot(&target);
            let coef = crate::linalg::solve_spd(&gram, &rhs).unwrap();
            let fitted = design.dot(&coef);
            let res_norm = (&target - &fitted).mapv(|v| v * v).sum().sqrt();
            let target_norm = target.mapv(|v| v * v).sum().sqrt();
            assert!(
                res_norm / target_norm < 1e-10,
                "channel {c}: relative residual {}",
                res_norm / target_norm
            );
        }
    }

    #[test]
    fn paired_construction_has_exact_inverse() {
        let spec = SynthSpec::correlated_pairs(3, 9, 0.5, 0.0, 17).unwrap();
        let att = synthetic_envelope(500, 31);
        let un = synthetic_envelope(500, 32);
        let trial = generate_synthetic(&spec, &att, &un, Side::Left).unwrap();
        // channel 0 minus channel 1 reproduces the attended envelope
        for t in 0..500 {
            let diff = trial.eeg[[t, 0]] - trial.eeg[[t, 1]];
            assert_relative_eq!(diff, att[t], epsilon = 1e-12, max_relative = 1e-9);
        }
    }

    #[test]
    fn recording_is_balanced_and_valid() {
        let spec = SynthSpec::correlated_pairs(2, 9, 0.5, 0.2, 8).unwrap();
        let rec = synthetic_recording("P77", &spec, 300, 123).unwrap();
        rec.validate().unwrap();
        assert_eq!(rec.trials.len(), 6);
    }

    #[test]
    fn envelope_is_standardized() {
        let env = synthetic_envelope(4000, 9);
        let n = env.len() as f64;
        let mean = env.sum() / n;
        let var = env.mapv(|v| (v - mean) * (v - mean)).sum() / (n - 1.0);
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }
}

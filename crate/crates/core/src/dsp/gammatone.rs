//! Gammatone filterbank and the speech-envelope extraction chain.
//!
//! Each band is a 4th-order gammatone implemented as a cascade of four
//! second-order sections with a shared all-pole denominator (the classic
//! digital design from Slaney's auditory-toolbox technical report), with
//! center frequencies equally spaced on the ERB-rate scale. Subband
//! envelopes are rectified (absolute value) and powerlaw-compressed, then
//! summed, bandpass-filtered, and decimated to the decoder rate.

use super::butter::{design_bandpass, BandpassSpec};
use super::{decimate, decimation_factor, DspError};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Gammatone filterbank specification.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GammatoneBankSpec {
    pub n_bands: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub compression_exponent: f64,
}

impl Default for GammatoneBankSpec {
    fn default() -> Self {
        Self {
            n_bands: 19,
            f_min_hz: 50.0,
            f_max_hz: 5000.0,
            compression_exponent: 0.6,
        }
    }
}

impl GammatoneBankSpec {
    fn validate(&self) -> Result<(), DspError> {
        if self.n_bands < 1 {
            return Err(DspError::InvalidSpec("n_bands must be >= 1".into()));
        }
        if !(self.f_min_hz > 0.0 && self.f_min_hz < self.f_max_hz) {
            return Err(DspError::InvalidSpec(format!(
                "need 0 < f_min < f_max, got [{}, {}]",
                self.f_min_hz, self.f_max_hz
            )));
        }
        if self.compression_exponent <= 0.0 {
            return Err(DspError::InvalidSpec(
                "compression exponent must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Center frequencies equally spaced on the ERB-rate scale,
    /// endpoints inclusive.
    pub fn center_frequencies(&self) -> Vec<f64> {
        let lo = erb_rate(self.f_min_hz);
        let hi = erb_rate(self.f_max_hz);
        if self.n_bands == 1 {
            return vec![inverse_erb_rate((lo + hi) / 2.0)];
        }
        (0..self.n_bands)
            .map(|i| {
                let e = lo + (hi - lo) * i as f64 / (self.n_bands - 1) as f64;
                inverse_erb_rate(e)
            })
            .collect()
    }
}

fn erb_rate(f_hz: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * f_hz).log10()
}

fn inverse_erb_rate(e: f64) -> f64 {
    (10.0_f64.powf(e / 21.4) - 1.0) / 0.00437
}

/// Equivalent rectangular bandwidth at `f_hz` (Glasberg & Moore).
fn erb_bandwidth(f_hz: f64) -> f64 {
    24.7 * (4.37 * f_hz / 1000.0 + 1.0)
}

/// One gammatone band: four second-order sections sharing a denominator.
struct GammatoneBand {
    // numerators per section: (n0, n1), denominator (1, d1, d2)
    numerators: [(f64, f64); 4],
    d1: f64,
    d2: f64,
}

impl GammatoneBand {
    fn design(cf_hz: f64, fs_hz: f64) -> Self {
        let t = 1.0 / fs_hz;
        let b = 1.019 * 2.0 * PI * erb_bandwidth(cf_hz);
        let w = 2.0 * PI * cf_hz * t;
        let exp_bt = (b * t).exp();
        let cos_w = w.cos();
        let sin_w = w.sin();

        let d1 = -2.0 * cos_w / exp_bt;
        let d2 = (-2.0 * b * t).exp();

        let sqrt_plus = (3.0 + 2.0_f64.powf(1.5)).sqrt();
        let sqrt_minus = (3.0 - 2.0_f64.powf(1.5)).sqrt();
        let a11 = -(2.0 * t * cos_w / exp_bt + 2.0 * sqrt_plus * t * sin_w / exp_bt) / 2.0;
        let a12 = -(2.0 * t * cos_w / exp_bt - 2.0 * sqrt_plus * t * sin_w / exp_bt) / 2.0;
        let a13 = -(2.0 * t * cos_w / exp_bt + 2.0 * sqrt_minus * t * sin_w / exp_bt) / 2.0;
        let a14 = -(2.0 * t * cos_w / exp_bt - 2.0 * sqrt_minus * t * sin_w / exp_bt) / 2.0;

        let mut band = Self {
            numerators: [(t, a11), (t, a12), (t, a13), (t, a14)],
            d1,
            d2,
        };

        // normalize to unit gain at the center frequency, spread evenly
        let gain = band.response_magnitude(cf_hz, fs_hz);
        let per_section = (1.0 / gain).powf(0.25);
        for (n0, n1) in band.numerators.iter_mut() {
            *n0 *= per_section;
            *n1 *= per_section;
        }
        band
    }

    fn response_magnitude(&self, freq_hz: f64, fs_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / fs_hz;
        let (zr, zi) = ((-w).cos(), (-w).sin()); // z^-1
        let z2 = (zr * zr - zi * zi, 2.0 * zr * zi); // z^-2
        let den = (1.0 + self.d1 * zr + self.d2 * z2.0, self.d1 * zi + self.d2 * z2.1);
        let den_mag = (den.0 * den.0 + den.1 * den.1).sqrt();
        let mut mag = 1.0;
        for (n0, n1) in &self.numerators {
            let num = (n0 + n1 * zr, n1 * zi);
            mag *= (num.0 * num.0 + num.1 * num.1).sqrt() / den_mag;
        }
        mag
    }

    fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for (n0, n1) in &self.numerators {
            let mut z0 = 0.0;
            let mut z1 = 0.0;
            for v in y.iter_mut() {
                let input = *v;
                let out = n0 * input + z0;
                z0 = n1 * input - self.d1 * out + z1;
                z1 = -self.d2 * out;
                *v = out;
            }
        }
        y
    }
}

/// Rectified, powerlaw-compressed subband sum at the audio rate
/// (the stage before the 1-9 Hz bandpass and decimation).
pub fn subband_envelope_sum(
    audio: &[f64],
    fs_hz: f64,
    spec: &GammatoneBankSpec,
) -> Result<Vec<f64>, DspError> {
    spec.validate()?;
    if fs_hz < 2.0 * spec.f_max_hz {
        return Err(DspError::SampleRateTooLow {
            fs_hz,
            min_hz: 2.0 * spec.f_max_hz,
        });
    }
    let mut sum = vec![0.0; audio.len()];
    for cf in spec.center_frequencies() {
        let band = GammatoneBand::design(cf, fs_hz);
        let y = band.filter(audio);
        for (acc, v) in sum.iter_mut().zip(y.iter()) {
            *acc += v.abs().powf(spec.compression_exponent);
        }
    }
    Ok(sum)
}

/// Full envelope chain: gammatone subbands -> |.|^exponent -> sum ->
/// zero-phase 1-9 Hz bandpass -> decimation to 20 Hz.
pub fn gammatone_envelope(
    audio: &[f64],
    fs_hz: f64,
    spec: &GammatoneBankSpec,
) -> Result<Vec<f64>, DspError> {
    let factor = decimation_factor(fs_hz, 20.0)?;
    let summed = subband_envelope_sum(audio, fs_hz, spec)?;
    let sos = design_bandpass(&BandpassSpec::speech_band(), fs_hz)?;
    let filtered = sos.filtfilt(&summed)?;
    decimate(&filtered, factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn center_frequencies_span_the_band() {
        let spec = GammatoneBankSpec::default();
        let cfs = spec.center_frequencies();
        assert_eq!(cfs.len(), 19);
        assert_relative_eq!(cfs[0], 50.0, max_relative = 1e-9);
        assert_relative_eq!(cfs[18], 5000.0, max_relative = 1e-9);
        for w in cfs.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn band_peaks_at_center_frequency() {
        let band = GammatoneBand::design(1000.0, 16000.0);
        let at_cf = band.response_magnitude(1000.0, 16000.0);
        assert_relative_eq!(at_cf, 1.0, max_relative = 1e-9);
        for f in [250.0, 500.0, 2000.0, 4000.0] {
            assert!(band.response_magnitude(f, 16000.0) < at_cf);
        }
    }

    #[test]
    fn zero_audio_gives_zero_envelope() {
        let audio = vec![0.0; 30_000];
        let env = gammatone_envelope(&audio, 10_000.0, &GammatoneBankSpec::default()).unwrap();
        assert!(env.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn subband_sum_is_nonnegative() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let audio: Vec<f64> = (0..20_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sum = subband_envelope_sum(&audio, 10_000.0, &GammatoneBankSpec::default()).unwrap();
        assert!(sum.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn powerlaw_homogeneity_of_subband_chain() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let audio: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scaled: Vec<f64> = audio.iter().map(|v| 3.0 * v).collect();
        let spec = GammatoneBankSpec::default();
        let e1 = subband_envelope_sum(&audio, 10_000.0, &spec).unwrap();
        let e2 = subband_envelope_sum(&scaled, 10_000.0, &spec).unwrap();
        let k = 3.0_f64.powf(0.6);
        for (a, b) in e1.iter().zip(e2.iter()) {
            assert_relative_eq!(*b, k * *a, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn am_tone_envelope_peaks_at_modulation_rate() {
        // 1 kHz carrier, 4 Hz amplitude modulation: the extracted envelope
        // should be dominated by a 4 Hz component
        let fs = 10_000.0;
        let n = 100_000; // 10 s
        let audio: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                (1.0 + 0.9 * (2.0 * PI * 4.0 * t).cos()) * (2.0 * PI * 1000.0 * t).sin()
            })
            .collect();
        let env = gammatone_envelope(&audio, fs, &GammatoneBankSpec::default()).unwrap();
        // naive DFT amplitude at integer frequencies 1..=9 Hz
        let amp = |f: f64| -> f64 {
            let mut re = 0.0;
            let mut im = 0.0;
            for (i, v) in env.iter().enumerate() {
                let ph = 2.0 * PI * f * i as f64 / 20.0;
                re += v * ph.cos();
                im -= v * ph.sin();
            }
            (re * re + im * im).sqrt()
        };
        let a4 = amp(4.0);
        for f in [1.0, 2.0, 3.0, 5.0, 6.0, 7.0, 8.0, 9.0] {
            assert!(a4 > amp(f), "{f} Hz bin beats the 4 Hz modulation");
        }
    }
}

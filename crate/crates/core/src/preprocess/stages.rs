//! Individual cleaning stages. All operate on time x channels matrices
//! and treat the validity mask as ground truth about which samples may
//! enter averages.

use super::PreprocessError;
use crate::corpus::{ChannelId, Montage, SampleMask, Setup};
use crate::linalg;
use ndarray::Array2;

/// Correlation threshold below which two channels count as unrelated.
pub const BAD_CHANNEL_CORR: f64 = 0.45;
/// Fraction of other channels that must be unrelated for a window flag.
pub const BAD_CHANNEL_FRACTION: f64 = 0.95;
/// Fraction of windows that must be flagged to remove a channel.
pub const BAD_CHANNEL_WINDOW_FRACTION: f64 = 0.5;
/// Correlation analysis window in seconds.
pub const BAD_CHANNEL_WINDOW_S: f64 = 2.0;
/// RMS analysis window in seconds.
pub const POWER_WINDOW_S: f64 = 1.0;
/// Consistency factor turning a median absolute deviation into a sigma.
const MAD_SIGMA: f64 = 1.4826;

/// Removes eye activity by least squares: `eeg - eog B` with
/// `B = argmin ||eog B - eeg||`. Returns the cleaned matrix and whether
/// the EOG Gram matrix was rank-deficient (solved via pseudoinverse).
pub fn eog_regress(
    eeg: &Array2<f64>,
    eog: &Array2<f64>,
) -> Result<(Array2<f64>, bool), PreprocessError> {
    if eeg.nrows() != eog.nrows() {
        return Err(PreprocessError::Stage {
            stage: "eog_regression",
            message: format!(
                "sample counts differ: eeg {} vs eog {}",
                eeg.nrows(),
                eog.nrows()
            ),
        });
    }
    if eog.ncols() == 0 {
        return Ok((eeg.clone(), false));
    }
    for c in 0..eog.ncols() {
        if eog.column(c).iter().all(|v| *v == 0.0) {
            return Err(PreprocessError::Stage {
                stage: "eog_regression",
                message: format!("EOG column {c} is identically zero"),
            });
        }
    }
    let gram = eog.t().dot(eog);
    let rhs = eog.t().dot(eeg);
    let (coef, dropped) = linalg::pinv_solve_gram(&gram, &rhs, 1e-12);
    let cleaned = eeg - &eog.dot(&coef);
    Ok((cleaned, dropped > 0))
}

/// Flags channels that fail to correlate with the rest of the array.
///
/// Per non-overlapping 2 s window, a channel is window-bad when its
/// Pearson correlation with at least 95% of the other channels falls
/// below 0.45; a channel is bad when window-bad in at least half of the
/// windows. Fewer than 3 channels cannot be judged, which yields an
/// empty set plus a warning.
pub fn detect_bad_channels(
    eeg: &Array2<f64>,
    fs_hz: f64,
) -> Result<(Vec<usize>, Vec<String>), PreprocessError> {
    let n_channels = eeg.ncols();
    let mut warnings = Vec::new();
    if n_channels < 3 {
        warnings.push(format!(
            "bad-channel detection skipped: only {n_channels} channels"
        ));
        return Ok((Vec::new(), warnings));
    }
    let win = (BAD_CHANNEL_WINDOW_S * fs_hz).round() as usize;
    let n_windows = eeg.nrows() / win;
    if n_windows == 0 {
        return Err(PreprocessError::Stage {
            stage: "bad_channel_detection",
            message: format!(
                "trial too short: {} samples, need at least {win} (2 s)",
                eeg.nrows()
            ),
        });
    }

    let flags = crate::par::map_indices(n_windows, |w| {
        let range = w * win..(w + 1) * win;
        // center and normalize each channel inside the window
        let mut centered = Array2::<f64>::zeros((win, n_channels));
        let mut norms = vec![0.0; n_channels];
        for c in 0..n_channels {
            let col = eeg.column(c);
            let mean = range.clone().map(|t| col[t]).sum::<f64>() / win as f64;
            let mut nrm = 0.0;
            for (i, t) in range.clone().enumerate() {
                let v = col[t] - mean;
                centered[[i, c]] = v;
                nrm += v * v;
            }
            norms[c] = nrm.sqrt();
        }
        let mut window_bad = vec![false; n_channels];
        for c in 0..n_channels {
            let mut uncorrelated = 0usize;
            for other in 0..n_channels {
                if other == c {
                    continue;
                }
                let corr = if norms[c] > 0.0 && norms[other] > 0.0 {
                    let dot = centered
                        .column(c)
                        .iter()
                        .zip(centered.column(other).iter())
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                    dot / (norms[c] * norms[other])
                } else {
                    0.0
                };
                if corr < BAD_CHANNEL_CORR {
                    uncorrelated += 1;
                }
            }
            window_bad[c] = uncorrelated as f64 >= BAD_CHANNEL_FRACTION * (n_channels - 1) as f64;
        }
        window_bad
    });

    let mut bad = Vec::new();
    for c in 0..n_channels {
        let flagged = flags.iter().filter(|w| w[c]).count();
        if flagged as f64 >= BAD_CHANNEL_WINDOW_FRACTION * n_windows as f64 {
            bad.push(c);
        }
    }
    Ok((bad, warnings))
}

/// Masks 1 s windows whose RMS is an upper outlier for their channel:
/// above `median + k * 1.4826 * MAD` across the trial's windows. Fully
/// masked channels are skipped; a zero-MAD channel only loses windows
/// that exceed the median outright.
pub fn reject_high_power_windows(
    eeg: &Array2<f64>,
    fs_hz: f64,
    mask: &SampleMask,
    k: f64,
) -> Result<SampleMask, PreprocessError> {
    let win = (POWER_WINDOW_S * fs_hz).round() as usize;
    if win == 0 {
        return Err(PreprocessError::Stage {
            stage: "window_rejection",
            message: "window shorter than one sample".into(),
        });
    }
    let n_windows = eeg.nrows() / win;
    let mut out = mask.clone();
    for c in 0..eeg.ncols() {
        if mask.invalid_fraction(c) == 1.0 {
            continue;
        }
        if n_windows == 0 {
            continue;
        }
        let col = eeg.column(c);
        let rms: Vec<f64> = (0..n_windows)
            .map(|w| {
                let mut s = 0.0;
                for t in w * win..(w + 1) * win {
                    s += col[t] * col[t];
                }
                (s / win as f64).sqrt()
            })
            .collect();
        let median = median_of(&rms);
        let deviations: Vec<f64> = rms.iter().map(|v| (v - median).abs()).collect();
        let mad = median_of(&deviations);
        let threshold = if mad > 0.0 {
            median + k * MAD_SIGMA * mad
        } else {
            median + 1e-12 * median.abs().max(1.0)
        };
        for (w, value) in rms.iter().enumerate() {
            if *value > threshold {
                out.invalidate_range(c, w * win..(w + 1) * win);
            }
        }
    }
    Ok(out)
}

fn median_of(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Reference scheme over the channels of one processing matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceScheme {
    /// Average of all channels per setup, excluding EOG and the shared
    /// Fp1 electrode.
    CommonAveragePerSetup,
    /// Average of the channels within the same ear (per setup and side).
    SameEarAverage,
    /// Average of the channels of the opposite ear (same setup).
    OtherEarAverage,
    /// One specific electrode, by montage label.
    SingleElectrode(String),
    /// Per system: scalp channels against the scalp Fp1 electrode, ear
    /// channels against the ear amplifier's shared Fp1 electrode.
    SharedFp1,
}

impl std::fmt::Display for ReferenceScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::CommonAveragePerSetup => write!(f, "car"),
            Self::SameEarAverage => write!(f, "same_ear"),
            Self::OtherEarAverage => write!(f, "other_ear"),
            Self::SingleElectrode(label) => write!(f, "electrode:{label}"),
            Self::SharedFp1 => write!(f, "shared_fp1"),
        }
    }
}

impl std::str::FromStr for ReferenceScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "car" => Ok(Self::CommonAveragePerSetup),
            "same_ear" => Ok(Self::SameEarAverage),
            "other_ear" => Ok(Self::OtherEarAverage),
            "shared_fp1" => Ok(Self::SharedFp1),
            other => {
                if let Some(label) = other.strip_prefix("electrode:") {
                    Ok(Self::SingleElectrode(label.to_string()))
                } else {
                    Err(format!(
                        "unknown reference scheme '{other}' (expected car, same_ear, other_ear, shared_fp1, or electrode:<LABEL>)"
                    ))
                }
            }
        }
    }
}

/// Subtracts the scheme's reference from each channel. `channels` names
/// the montage identity of each matrix column. Invalid samples and
/// removed channels never enter reference averages. EOG columns pass
/// through untouched.
pub fn rereference(
    eeg: &Array2<f64>,
    channels: &[ChannelId],
    montage: &Montage,
    scheme: &ReferenceScheme,
    mask: &SampleMask,
) -> Result<Array2<f64>, PreprocessError> {
    if eeg.ncols() != channels.len() {
        return Err(PreprocessError::Stage {
            stage: "rereference",
            message: format!(
                "matrix has {} columns but {} channel ids were given",
                eeg.ncols(),
                channels.len()
            ),
        });
    }
    let setups: Vec<Setup> = channels.iter().map(|c| montage.setup(*c)).collect();
    let mut out = eeg.clone();

    // reference signal per column, shared within groups
    match scheme {
        ReferenceScheme::CommonAveragePerSetup => {
            for setup in unique_setups(&setups) {
                if setup == Setup::Eog || setup == Setup::SharedFp1 {
                    continue;
                }
                let members = columns_of(&setups, setup);
                let reference = masked_mean(eeg, mask, &members);
                subtract(&mut out, &members, &reference);
            }
        }
        ReferenceScheme::SameEarAverage => {
            require_ear_only(&setups)?;
            for setup in unique_setups(&setups) {
                let members = columns_of(&setups, setup);
                let reference = masked_mean(eeg, mask, &members);
                subtract(&mut out, &members, &reference);
            }
        }
        ReferenceScheme::OtherEarAverage => {
            require_ear_only(&setups)?;
            for setup in unique_setups(&setups) {
                let opposite = match setup {
                    Setup::AroundEarLeft => Setup::AroundEarRight,
                    Setup::AroundEarRight => Setup::AroundEarLeft,
                    Setup::InEarLeft => Setup::InEarRight,
                    Setup::InEarRight => Setup::InEarLeft,
                    _ => unreachable!("non-ear setups rejected above"),
                };
                let donors = columns_of(&setups, opposite);
                if donors.is_empty() {
                    return Err(PreprocessError::InvalidScheme(format!(
                        "other-ear referencing needs channels on both sides, none for {opposite:?}"
                    )));
                }
                let members = columns_of(&setups, setup);
                let reference = masked_mean(eeg, mask, &donors);
                subtract(&mut out, &members, &reference);
            }
        }
        ReferenceScheme::SingleElectrode(label) => {
            let id = montage
                .find(label)
                .ok_or_else(|| PreprocessError::ReferenceTarget(format!(
                    "electrode '{label}' not in montage"
                )))?;
            let col = channels
                .iter()
                .position(|c| *c == id)
                .ok_or_else(|| PreprocessError::ReferenceTarget(format!(
                    "electrode '{label}' not among the processed channels"
                )))?;
            if mask.invalid_fraction(col) == 1.0 {
                return Err(PreprocessError::ReferenceTarget(format!(
                    "reference electrode '{label}' was removed as a bad channel"
                )));
            }
            let reference: Vec<f64> = eeg.column(col).to_vec();
            let members: Vec<usize> = (0..channels.len())
                .filter(|i| setups[*i] != Setup::Eog)
                .collect();
            subtract(&mut out, &members, &reference);
        }
        ReferenceScheme::SharedFp1 => {
            // scalp system against scalp Fp1, ear system against the
            // shared electrode of the ear amplifier
            let scalp_members: Vec<usize> = (0..channels.len())
                .filter(|i| setups[*i] == Setup::Scalp)
                .collect();
            if !scalp_members.is_empty() {
                let fp1 = scalp_members
                    .iter()
                    .copied()
                    .find(|i| montage.label(channels[*i]) == "Fp1")
                    .ok_or_else(|| PreprocessError::ReferenceTarget(
                        "shared-Fp1 referencing needs a scalp channel labeled 'Fp1'".into(),
                    ))?;
                let reference: Vec<f64> = eeg.column(fp1).to_vec();
                subtract(&mut out, &scalp_members, &reference);
            }
            let ear_members: Vec<usize> = (0..channels.len())
                .filter(|i| setups[*i].is_ear())
                .collect();
            if !ear_members.is_empty() {
                let shared = (0..channels.len())
                    .find(|i| setups[*i] == Setup::SharedFp1)
                    .ok_or_else(|| PreprocessError::ReferenceTarget(
                        "shared-Fp1 referencing needs the ear amplifier's Fp1 channel".into(),
                    ))?;
                let reference: Vec<f64> = eeg.column(shared).to_vec();
                let mut members = ear_members;
                members.push(shared);
                subtract(&mut out, &members, &reference);
            }
        }
    }
    Ok(out)
}

fn unique_setups(setups: &[Setup]) -> Vec<Setup> {
    let mut seen = Vec::new();
    for s in setups {
        if !seen.contains(s) {
            seen.push(*s);
        }
    }
    seen
}

fn columns_of(setups: &[Setup], setup: Setup) -> Vec<usize> {
    (0..setups.len()).filter(|i| setups[*i] == setup).collect()
}

fn require_ear_only(setups: &[Setup]) -> Result<(), PreprocessError> {
    if setups.iter().any(|s| !s.is_ear()) {
        return Err(PreprocessError::InvalidScheme(
            "ear-average referencing is only valid for ear setups".into(),
        ));
    }
    Ok(())
}

/// Per-sample mean over the given columns, counting only mask-valid
/// entries; 0 where no entry is valid.
fn masked_mean(eeg: &Array2<f64>, mask: &SampleMask, members: &[usize]) -> Vec<f64> {
    let n = eeg.nrows();
    let mut mean = vec![0.0; n];
    for t in 0..n {
        let mut acc = 0.0;
        let mut count = 0usize;
        for &c in members {
            if mask.is_valid(t, c) {
                acc += eeg[[t, c]];
                count += 1;
            }
        }
        if count > 0 {
            mean[t] = acc / count as f64;
        }
    }
    mean
}

fn subtract(eeg: &mut Array2<f64>, members: &[usize], reference: &[f64]) {
    for &c in members {
        for t in 0..eeg.nrows() {
            eeg[[t, c]] -= reference[t];
        }
    }
}

/// Scales the matrix so its Frobenius norm over valid entries is 1, then
/// zeroes every invalid entry.
pub fn normalize_frobenius(
    eeg: &Array2<f64>,
    mask: &SampleMask,
) -> Result<Array2<f64>, PreprocessError> {
    let mut norm_sq = 0.0;
    let mut any_valid = false;
    for t in 0..eeg.nrows() {
        for c in 0..eeg.ncols() {
            if mask.is_valid(t, c) {
                norm_sq += eeg[[t, c]] * eeg[[t, c]];
                any_valid = true;
            }
        }
    }
    if !any_valid {
        return Err(PreprocessError::AllSamplesInvalid);
    }
    if norm_sq <= 0.0 {
        return Err(PreprocessError::Stage {
            stage: "normalize",
            message: "all valid samples are zero".into(),
        });
    }
    let scale = 1.0 / norm_sq.sqrt();
    let mut out = eeg * scale;
    for t in 0..eeg.nrows() {
        for c in 0..eeg.ncols() {
            if !mask.is_valid(t, c) {
                out[[t, c]] = 0.0;
            }
        }
    }
    Ok(out)
}

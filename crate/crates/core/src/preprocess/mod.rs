//! Per-trial EEG cleaning chain with mask-aware semantics.
//!
//! Stage order: bandpass -> EOG regression (scalp only) -> bad-channel
//! removal -> artifact-reconstruction slot (pass-through) -> high-power
//! window rejection -> re-referencing -> decimation to 20 Hz -> Frobenius
//! normalization. Each EEG setup is cleaned separately; combined
//! selections concatenate the per-setup results after re-referencing
//! everything to the shared Fp1 electrode.

mod stages;

pub use stages::{
    detect_bad_channels, eog_regress, normalize_frobenius, reject_high_power_windows,
    rereference, ReferenceScheme,
};

use crate::corpus::{ChannelId, Montage, Recording, SampleMask, Setup, Side, Trial};
use crate::decoder::Speaker;
use crate::dsp::{self, BandpassSpec};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("stage {stage}: {message}")]
    Stage {
        stage: &'static str,
        message: String,
    },
    #[error("invalid reference scheme: {0}")]
    InvalidScheme(String),
    #[error("reference target: {0}")]
    ReferenceTarget(String),
    #[error("every sample of the trial is masked invalid")]
    AllSamplesInvalid,
    #[error("no channels for setup selection {0}")]
    EmptySetup(String),
    #[error(transparent)]
    Dsp(#[from] dsp::DspError),
}

/// Tunable knobs of the cleaning chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    /// Butterworth prototype order of the bandpass.
    pub filter_order: usize,
    pub eog_regression: bool,
    pub bad_channel_detection: bool,
    /// Keep the artifact-reconstruction slot in the chain (identity
    /// transform; the cutoff is carried as metadata only).
    pub artifact_reconstruction: bool,
    pub artifact_cutoff: f64,
    pub window_rejection: bool,
    /// Robust z-score threshold for window rejection.
    pub rejection_k: f64,
    #[serde(
        serialize_with = "serialize_scheme",
        deserialize_with = "deserialize_scheme"
    )]
    pub reference: ReferenceScheme,
    pub target_rate_hz: f64,
}

fn serialize_scheme<S: serde::Serializer>(
    scheme: &ReferenceScheme,
    s: S,
) -> Result<S::Ok, S::Error> {
    s.serialize_str(&scheme.to_string())
}

fn deserialize_scheme<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> Result<ReferenceScheme, D::Error> {
    let text = String::deserialize(d)?;
    text.parse().map_err(serde::de::Error::custom)
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::standard()
    }
}

impl PipelineConfig {
    /// The full cleaning chain with default thresholds.
    pub fn standard() -> Self {
        Self {
            band_low_hz: 1.0,
            band_high_hz: 9.0,
            filter_order: 4,
            eog_regression: true,
            bad_channel_detection: true,
            artifact_reconstruction: true,
            artifact_cutoff: 5.0,
            window_rejection: true,
            rejection_k: 5.0,
            reference: ReferenceScheme::CommonAveragePerSetup,
            target_rate_hz: 20.0,
        }
    }

    /// Bandpass, re-reference, decimate, and normalize only.
    pub fn no_artifact_removal() -> Self {
        Self {
            eog_regression: false,
            bad_channel_detection: false,
            artifact_reconstruction: false,
            window_rejection: false,
            ..Self::standard()
        }
    }

    fn bandpass_spec(&self) -> BandpassSpec {
        BandpassSpec {
            low_hz: self.band_low_hz,
            high_hz: self.band_high_hz,
            order: self.filter_order,
            zero_phase: true,
        }
    }
}

/// One of the three independently recorded EEG systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseSetup {
    Scalp,
    AroundEar,
    InEar,
}

impl BaseSetup {
    /// Setup tags whose channels this system decodes from.
    fn decode_tags(self) -> &'static [Setup] {
        match self {
            BaseSetup::Scalp => &[Setup::Scalp],
            BaseSetup::AroundEar => &[Setup::AroundEarLeft, Setup::AroundEarRight],
            BaseSetup::InEar => &[Setup::InEarLeft, Setup::InEarRight],
        }
    }
}

impl std::fmt::Display for BaseSetup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BaseSetup::Scalp => write!(f, "scalp"),
            BaseSetup::AroundEar => write!(f, "around_ear"),
            BaseSetup::InEar => write!(f, "in_ear"),
        }
    }
}

impl std::str::FromStr for BaseSetup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scalp" => Ok(BaseSetup::Scalp),
            "around_ear" => Ok(BaseSetup::AroundEar),
            "in_ear" => Ok(BaseSetup::InEar),
            other => Err(format!("unknown setup '{other}'")),
        }
    }
}

/// Which channels feed the decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SetupSelection {
    Single(BaseSetup),
    /// Early integration of several systems; forces shared-Fp1
    /// referencing so the amplifiers share a reference frame.
    Combined(Vec<BaseSetup>),
}

impl SetupSelection {
    pub fn scalp() -> Self {
        Self::Single(BaseSetup::Scalp)
    }

    pub fn around_ear() -> Self {
        Self::Single(BaseSetup::AroundEar)
    }

    pub fn in_ear() -> Self {
        Self::Single(BaseSetup::InEar)
    }

    fn setups(&self) -> Vec<BaseSetup> {
        match self {
            Self::Single(s) => vec![*s],
            Self::Combined(v) => v.clone(),
        }
    }

    /// Combined selections must use shared-Fp1 referencing.
    pub fn validate(&self, config: &PipelineConfig) -> Result<(), PreprocessError> {
        if let Self::Combined(list) = self {
            if list.len() > 1 && config.reference != ReferenceScheme::SharedFp1 {
                return Err(PreprocessError::InvalidScheme(format!(
                    "combined setups require shared-Fp1 referencing, got {}",
                    config.reference
                )));
            }
            if list.is_empty() {
                return Err(PreprocessError::EmptySetup("combined".into()));
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for SetupSelection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Single(s) => write!(f, "{s}"),
            Self::Combined(list) => {
                let names: Vec<String> = list.iter().map(|s| s.to_string()).collect();
                write!(f, "{}", names.join("+"))
            }
        }
    }
}

impl std::str::FromStr for SetupSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('+').collect();
        if parts.len() == 1 {
            Ok(Self::Single(parts[0].parse()?))
        } else {
            let setups = parts
                .iter()
                .map(|p| p.parse())
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Self::Combined(setups))
        }
    }
}

/// What the cleaning chain did to one trial.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CleaningReport {
    pub removed_channels: Vec<String>,
    /// Per decode channel: label and fraction of samples masked invalid.
    pub rejected_sample_fraction: Vec<(String, f64)>,
    pub stages_applied: Vec<String>,
    pub warnings: Vec<String>,
}

/// A trial after cleaning: 20 Hz EEG restricted to the decode channels,
/// its validity mask, and standardized envelopes trimmed to length.
#[derive(Debug, Clone)]
pub struct PreparedTrial {
    pub eeg: Array2<f64>,
    pub channels: Vec<ChannelId>,
    pub mask: SampleMask,
    pub fs_hz: f64,
    pub attended_envelope: Array1<f64>,
    pub unattended_envelope: Array1<f64>,
    pub attended_side: Side,
    pub report: CleaningReport,
}

impl PreparedTrial {
    /// Envelope of speaker 1 (the left stream).
    pub fn envelope_1(&self) -> &Array1<f64> {
        match self.attended_side {
            Side::Left => &self.attended_envelope,
            Side::Right => &self.unattended_envelope,
        }
    }

    /// Envelope of speaker 2 (the right stream).
    pub fn envelope_2(&self) -> &Array1<f64> {
        match self.attended_side {
            Side::Left => &self.unattended_envelope,
            Side::Right => &self.attended_envelope,
        }
    }

    pub fn attended_speaker(&self) -> Speaker {
        match self.attended_side {
            Side::Left => Speaker::One,
            Side::Right => Speaker::Two,
        }
    }

    /// Restricts the trial to a subset of its columns.
    pub fn select_columns(&self, columns: &[usize]) -> PreparedTrial {
        PreparedTrial {
            eeg: self.eeg.select(Axis(1), columns),
            channels: columns.iter().map(|&i| self.channels[i]).collect(),
            mask: self.mask.select_channels(columns),
            fs_hz: self.fs_hz,
            attended_envelope: self.attended_envelope.clone(),
            unattended_envelope: self.unattended_envelope.clone(),
            attended_side: self.attended_side,
            report: self.report.clone(),
        }
    }
}

/// One setup's processing state inside the trial pipeline.
struct GroupResult {
    eeg: Array2<f64>,
    channels: Vec<ChannelId>,
    mask: SampleMask,
    removed: Vec<String>,
    warnings: Vec<String>,
}

/// Runs the cleaning chain for one trial and one setup selection.
pub fn preprocess_trial(
    trial: &Trial,
    montage: &Montage,
    config: &PipelineConfig,
    selection: &SetupSelection,
) -> Result<(PreparedTrial, SampleMask, CleaningReport), PreprocessError> {
    selection.validate(config)?;
    let fs = trial.sample_rate_hz;
    let factor = dsp::decimation_factor(fs, config.target_rate_hz)?;

    // bandpass every montage channel once; groups take views of this
    let sos = dsp::design_bandpass(&config.bandpass_spec(), fs)?;
    let n = trial.eeg.nrows();
    let mut filtered = Array2::<f64>::zeros((n, trial.eeg.ncols()));
    let columns = crate::par::map_indices(trial.eeg.ncols(), |c| {
        sos.filtfilt(trial.eeg.column(c).as_standard_layout().as_slice().unwrap())
    });
    for (c, col) in columns.into_iter().enumerate() {
        let col = col.map_err(|e| PreprocessError::Stage {
            stage: "bandpass",
            message: e.to_string(),
        })?;
        for t in 0..n {
            filtered[[t, c]] = col[t];
        }
    }

    let mut stages = vec![format!(
        "bandpass({}-{} Hz, order {})",
        config.band_low_hz, config.band_high_hz, config.filter_order
    )];
    let mut group_results = Vec::new();
    let setups = selection.setups();
    for base in &setups {
        group_results.push(process_group(*base, &filtered, fs, montage, config)?);
    }
    record_group_stages(&mut stages, config, &setups);

    // concatenate groups (montage order within each group)
    let total_cols: usize = group_results.iter().map(|g| g.channels.len()).sum();
    if total_cols == 0 {
        return Err(PreprocessError::EmptySetup(selection.to_string()));
    }
    let mut eeg = Array2::<f64>::zeros((n, total_cols));
    let mut mask = SampleMask::all_valid(n, total_cols);
    let mut channels = Vec::with_capacity(total_cols);
    let mut removed = Vec::new();
    let mut warnings = Vec::new();
    let mut offset = 0;
    for g in group_results {
        for (j, id) in g.channels.iter().enumerate() {
            let dst = offset + j;
            for t in 0..n {
                eeg[[t, dst]] = g.eeg[[t, j]];
                mask.valid[[t, dst]] = g.mask.valid[[t, j]];
            }
            channels.push(*id);
        }
        removed.extend(g.removed);
        warnings.extend(g.warnings);
        offset += g.channels.len();
    }

    // decimate EEG and mask to the target rate
    let eeg20 = dsp::decimate_rows(&eeg, factor)?;
    let mask20 = mask.decimate(factor);
    stages.push(format!("decimate({factor})"));

    // normalize over valid entries, then zero the invalid ones
    let normalized = normalize_frobenius(&eeg20, &mask20)?;
    stages.push("normalize".to_string());

    // align and standardize the envelopes
    let env_len = trial
        .attended_envelope
        .len()
        .min(trial.unattended_envelope.len())
        .min(normalized.nrows());
    let eeg_final = normalized.slice(ndarray::s![0..env_len, ..]).to_owned();
    let mask_final = SampleMask {
        valid: mask20.valid.slice(ndarray::s![0..env_len, ..]).to_owned(),
    };
    let standardize_env = |env: &Array1<f64>| -> Result<Array1<f64>, PreprocessError> {
        let head: Vec<f64> = env.iter().take(env_len).copied().collect();
        dsp::standardize(&head)
            .map(Array1::from_vec)
            .map_err(|e| PreprocessError::Stage {
                stage: "envelope_standardize",
                message: e.to_string(),
            })
    };
    let attended = standardize_env(&trial.attended_envelope)?;
    let unattended = standardize_env(&trial.unattended_envelope)?;

    let report = CleaningReport {
        removed_channels: removed,
        rejected_sample_fraction: channels
            .iter()
            .enumerate()
            .map(|(i, id)| (montage.label(*id).to_string(), mask_final.invalid_fraction(i)))
            .collect(),
        stages_applied: stages,
        warnings,
    };
    let prepared = PreparedTrial {
        eeg: eeg_final,
        channels,
        mask: mask_final.clone(),
        fs_hz: config.target_rate_hz,
        attended_envelope: attended,
        unattended_envelope: unattended,
        attended_side: trial.attended_side,
        report: report.clone(),
    };
    Ok((prepared, mask_final, report))
}

fn record_group_stages(stages: &mut Vec<String>, config: &PipelineConfig, setups: &[BaseSetup]) {
    if config.eog_regression && setups.contains(&BaseSetup::Scalp) {
        stages.push("eog_regression".to_string());
    }
    if config.bad_channel_detection {
        stages.push("bad_channel_detection".to_string());
    }
    if config.artifact_reconstruction {
        stages.push(format!(
            "artifact_reconstruction(passthrough, cutoff={})",
            config.artifact_cutoff
        ));
    }
    if config.window_rejection {
        stages.push(format!("window_rejection(k={})", config.rejection_k));
    }
    stages.push(format!("rereference({})", config.reference));
}

/// Cleans one setup: EOG regression (scalp), bad channels, the artifact
/// slot, window rejection, and re-referencing, on the bandpassed data.
fn process_group(
    base: BaseSetup,
    filtered: &Array2<f64>,
    fs: f64,
    montage: &Montage,
    config: &PipelineConfig,
) -> Result<GroupResult, PreprocessError> {
    let fs_col = filtered.nrows();
    let mut decode_ids: Vec<ChannelId> = Vec::new();
    for tag in base.decode_tags() {
        decode_ids.extend(montage.channels_in(*tag));
    }
    if decode_ids.is_empty() {
        return Err(PreprocessError::EmptySetup(base.to_string()));
    }
    let mut warnings = Vec::new();

    // group matrix
    let mut eeg = Array2::<f64>::zeros((fs_col, decode_ids.len()));
    for (j, id) in decode_ids.iter().enumerate() {
        for t in 0..fs_col {
            eeg[[t, j]] = filtered[[t, id.0]];
        }
    }

    // EOG regression, scalp system only
    if base == BaseSetup::Scalp && config.eog_regression {
        let eog_ids = montage.channels_in(Setup::Eog);
        if !eog_ids.is_empty() {
            let mut eog = Array2::<f64>::zeros((fs_col, eog_ids.len()));
            for (j, id) in eog_ids.iter().enumerate() {
                for t in 0..fs_col {
                    eog[[t, j]] = filtered[[t, id.0]];
                }
            }
            let (cleaned, deficient) = eog_regress(&eeg, &eog)?;
            eeg = cleaned;
            if deficient {
                warnings.push("EOG regressors rank-deficient; used pseudoinverse".to_string());
            }
        }
    }

    let mut mask = SampleMask::all_valid(fs_col, decode_ids.len());
    let mut removed = Vec::new();

    if config.bad_channel_detection {
        let (bad, mut warn) = detect_bad_channels(&eeg, fs)?;
        warnings.append(&mut warn);
        for c in bad {
            mask.invalidate_channel(c);
            removed.push(montage.label(decode_ids[c]).to_string());
        }
    }

    // artifact-reconstruction slot: identity transform

    if config.window_rejection {
        mask = reject_high_power_windows(&eeg, fs, &mask, config.rejection_k)?;
    }

    // re-referencing; cross-system references are appended as an extra
    // column so the public rereference operation sees them
    let scheme = &config.reference;
    let needs_external = match scheme {
        ReferenceScheme::SingleElectrode(label) => {
            let id = montage.find(label).ok_or_else(|| {
                PreprocessError::ReferenceTarget(format!("electrode '{label}' not in montage"))
            })?;
            if decode_ids.contains(&id) {
                None
            } else {
                Some(id)
            }
        }
        ReferenceScheme::SharedFp1 => {
            let shared = montage.channels_in(Setup::SharedFp1);
            match base {
                BaseSetup::Scalp => None,
                _ => {
                    let id = *shared.first().ok_or_else(|| {
                        PreprocessError::ReferenceTarget(
                            "montage has no shared Fp1 channel".into(),
                        )
                    })?;
                    Some(id)
                }
            }
        }
        _ => None,
    };

    let (referenced, final_ids, final_mask) = if let Some(ext_id) = needs_external {
        let mut extended = Array2::<f64>::zeros((fs_col, decode_ids.len() + 1));
        extended
            .slice_mut(ndarray::s![.., 0..decode_ids.len()])
            .assign(&eeg);
        for t in 0..fs_col {
            extended[[t, decode_ids.len()]] = filtered[[t, ext_id.0]];
        }
        let mut ids = decode_ids.clone();
        ids.push(ext_id);
        let mut ext_mask = SampleMask::all_valid(fs_col, ids.len());
        ext_mask
            .valid
            .slice_mut(ndarray::s![.., 0..decode_ids.len()])
            .assign(&mask.valid);
        let referenced = rereference(&extended, &ids, montage, scheme, &ext_mask)?;
        // drop the appended reference column again
        let keep: Vec<usize> = (0..decode_ids.len()).collect();
        (
            referenced.select(Axis(1), &keep),
            decode_ids.clone(),
            mask,
        )
    } else {
        let referenced = rereference(&eeg, &decode_ids, montage, scheme, &mask)?;
        (referenced, decode_ids.clone(), mask)
    };

    // under shared-Fp1 referencing the scalp Fp1 column is the reference
    // itself (identically zero): drop it from the decode set
    let (out_eeg, out_ids, out_mask) =
        if *scheme == ReferenceScheme::SharedFp1 && base == BaseSetup::Scalp {
            let keep: Vec<usize> = final_ids
                .iter()
                .enumerate()
                .filter(|(_, id)| montage.label(**id) != "Fp1")
                .map(|(i, _)| i)
                .collect();
            (
                referenced.select(Axis(1), &keep),
                keep.iter().map(|&i| final_ids[i]).collect(),
                final_mask.select_channels(&keep),
            )
        } else {
            (referenced, final_ids, final_mask)
        };

    Ok(GroupResult {
        eeg: out_eeg,
        channels: out_ids,
        mask: out_mask,
        removed,
        warnings,
    })
}

/// Runs the chain on all six trials (in parallel when enabled).
pub fn preprocess_recording(
    recording: &Recording,
    config: &PipelineConfig,
    selection: &SetupSelection,
) -> Result<Vec<PreparedTrial>, PreprocessError> {
    let results = crate::par::map_slice(&recording.trials, |trial| {
        preprocess_trial(trial, &recording.montage, config, selection)
            .map(|(prepared, _, _)| prepared)
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{self, Condition, SynthSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic_trial(n: usize) -> (Trial, Montage) {
        let spec = SynthSpec::correlated_pairs(2, 9, 0.5, 0.0, 5).unwrap();
        let att = corpus::synthetic_envelope(n, 1);
        let un = corpus::synthetic_envelope(n, 2);
        let trial = corpus::generate_synthetic(&spec, &att, &un, Side::Left).unwrap();
        (trial, Montage::synthetic(4))
    }

    fn raw_rate_trial(n_raw: usize, n_channels: usize, seed: u64) -> (Trial, Montage) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut eeg = Array2::<f64>::zeros((n_raw, n_channels));
        // correlated channels: shared smooth signal plus small noise
        for t in 0..n_raw {
            let base: f64 = (2.0 * std::f64::consts::PI * 4.0 * t as f64 / 1000.0).sin();
            for c in 0..n_channels {
                eeg[[t, c]] = base * (1.0 + 0.1 * c as f64) + 0.05 * rng.gen_range(-1.0..1.0);
            }
        }
        let n_env = n_raw / 50;
        let trial = Trial {
            eeg,
            sample_rate_hz: 1000.0,
            attended_envelope: corpus::synthetic_envelope(n_env, seed + 1),
            unattended_envelope: corpus::synthetic_envelope(n_env, seed + 2),
            attended_side: Side::Left,
            condition: Condition::Video,
        };
        (trial, Montage::synthetic(n_channels))
    }

    #[test]
    fn no_artifact_config_lists_only_core_stages() {
        let (trial, montage) = synthetic_trial(600);
        let config = PipelineConfig::no_artifact_removal();
        let (_, _, report) =
            preprocess_trial(&trial, &montage, &config, &SetupSelection::scalp()).unwrap();
        assert_eq!(report.stages_applied.len(), 4);
        assert!(report.stages_applied[0].starts_with("bandpass"));
        assert!(report.stages_applied[1].starts_with("rereference"));
        assert!(report.stages_applied[2].starts_with("decimate"));
        assert_eq!(report.stages_applied[3], "normalize");
    }

    #[test]
    fn raw_rate_trial_is_decimated_fifty_fold() {
        let (trial, montage) = raw_rate_trial(10_000, 4, 3);
        let config = PipelineConfig::no_artifact_removal();
        let (prepared, _, report) =
            preprocess_trial(&trial, &montage, &config, &SetupSelection::scalp()).unwrap();
        assert_eq!(prepared.eeg.nrows(), 10_000 / 50);
        assert_eq!(prepared.fs_hz, 20.0);
        assert!(report.stages_applied.iter().any(|s| s == "decimate(50)"));
    }

    #[test]
    fn full_pipeline_keeps_clean_synthetic_channels() {
        let (trial, montage) = synthetic_trial(2400);
        let mut config = PipelineConfig::standard();
        config.eog_regression = false; // synthetic montage has no EOG
        let (prepared, mask, report) =
            preprocess_trial(&trial, &montage, &config, &SetupSelection::scalp()).unwrap();
        assert!(report.removed_channels.is_empty(), "{:?}", report.removed_channels);
        for c in 0..prepared.channels.len() {
            assert!(
                mask.invalid_fraction(c) < 0.05,
                "channel {c} lost {}",
                mask.invalid_fraction(c)
            );
        }
    }

    #[test]
    fn gain_is_absorbed_by_normalization() {
        let (trial, montage) = raw_rate_trial(8_000, 4, 9);
        let mut scaled = trial.clone();
        scaled.eeg = &trial.eeg * 7.5;
        let config = PipelineConfig::standard();
        let selection = SetupSelection::scalp();
        let (a, _, _) = preprocess_trial(&trial, &montage, &config, &selection).unwrap();
        let (b, _, _) = preprocess_trial(&scaled, &montage, &config, &selection).unwrap();
        for (x, y) in a.eeg.iter().zip(b.eeg.iter()) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn pipeline_is_deterministic() {
        let (trial, montage) = raw_rate_trial(6_000, 4, 11);
        let config = PipelineConfig::standard();
        let selection = SetupSelection::scalp();
        let (a, _, _) = preprocess_trial(&trial, &montage, &config, &selection).unwrap();
        let (b, _, _) = preprocess_trial(&trial, &montage, &config, &selection).unwrap();
        assert_eq!(a.eeg, b.eeg);
        assert_eq!(a.mask, b.mask);
    }

    #[test]
    fn ear_selection_never_applies_eog_regression() {
        let montage = Montage::standard();
        let n = 4000;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let eeg = Array2::from_shape_fn((n, montage.len()), |_| rng.gen_range(-1.0..1.0));
        let trial = Trial {
            eeg,
            sample_rate_hz: 1000.0,
            attended_envelope: corpus::synthetic_envelope(n / 50, 1),
            unattended_envelope: corpus::synthetic_envelope(n / 50, 2),
            attended_side: Side::Left,
            condition: Condition::Video,
        };
        let config = PipelineConfig {
            bad_channel_detection: false,
            window_rejection: false,
            ..PipelineConfig::standard()
        };
        let (prepared, _, report) =
            preprocess_trial(&trial, &montage, &config, &SetupSelection::in_ear()).unwrap();
        assert!(!report.stages_applied.iter().any(|s| s.contains("eog")));
        assert_eq!(prepared.channels.len(), 12);
    }

    #[test]
    fn combined_selection_requires_shared_fp1() {
        let (trial, montage) = synthetic_trial(600);
        let config = PipelineConfig::standard(); // CAR reference
        let selection =
            SetupSelection::Combined(vec![BaseSetup::Scalp, BaseSetup::InEar]);
        let err = preprocess_trial(&trial, &montage, &config, &selection).unwrap_err();
        assert!(err.to_string().contains("shared-Fp1"));
    }

    #[test]
    fn combined_selection_concatenates_and_drops_references() {
        let montage = Montage::standard();
        let n = 4000;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        // correlated base so nothing is flagged bad
        let mut eeg = Array2::<f64>::zeros((n, montage.len()));
        for t in 0..n {
            let base: f64 = (2.0 * std::f64::consts::PI * 5.0 * t as f64 / 1000.0).sin();
            for c in 0..montage.len() {
                eeg[[t, c]] = base + 0.05 * rng.gen_range(-1.0..1.0);
            }
        }
        let trial = Trial {
            eeg,
            sample_rate_hz: 1000.0,
            attended_envelope: corpus::synthetic_envelope(n / 50, 3),
            unattended_envelope: corpus::synthetic_envelope(n / 50, 4),
            attended_side: Side::Right,
            condition: Condition::Fixation,
        };
        let config = PipelineConfig {
            reference: ReferenceScheme::SharedFp1,
            ..PipelineConfig::standard()
        };
        let selection = SetupSelection::Combined(vec![
            BaseSetup::Scalp,
            BaseSetup::AroundEar,
            BaseSetup::InEar,
        ]);
        let (prepared, _, _) =
            preprocess_trial(&trial, &montage, &config, &selection).unwrap();
        // 28 scalp (Fp1 dropped) + 19 around-ear + 12 in-ear
        assert_eq!(prepared.channels.len(), 28 + 19 + 12);
        let labels: Vec<&str> = prepared
            .channels
            .iter()
            .map(|c| montage.label(*c))
            .collect();
        assert!(!labels.contains(&"Fp1"));
        assert!(!labels.contains(&"xFp1"));
        assert!(!labels.contains(&"EOG1"));
    }

    #[test]
    fn mask_only_shrinks_through_the_chain() {
        // a spiky channel plus an uncorrelated channel: both kinds of
        // invalidation must appear in the final mask and the report
        let montage = Montage::synthetic(5);
        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut eeg = Array2::<f64>::zeros((n, 5));
        for t in 0..n {
            let base: f64 = (2.0 * std::f64::consts::PI * 4.0 * t as f64 / 1000.0).sin();
            for c in 0..4 {
                eeg[[t, c]] = base * (1.0 + 0.05 * c as f64) + 0.02 * rng.gen_range(-1.0..1.0);
            }
            // channel 4 is pure noise (uncorrelated with the rest)
            eeg[[t, 4]] = rng.gen_range(-1.0..1.0);
        }
        // inject a huge burst on channel 2 between 3 s and 4 s
        for t in 3000..4000 {
            eeg[[t, 2]] += 500.0 * rng.gen_range(-1.0..1.0);
        }
        let trial = Trial {
            eeg,
            sample_rate_hz: 1000.0,
            attended_envelope: corpus::synthetic_envelope(n / 50, 5),
            unattended_envelope: corpus::synthetic_envelope(n / 50, 6),
            attended_side: Side::Left,
            condition: Condition::Video,
        };
        let config = PipelineConfig::standard();
        let (prepared, mask, report) =
            preprocess_trial(&trial, &montage, &config, &SetupSelection::scalp()).unwrap();
        assert_eq!(report.removed_channels, vec!["S05".to_string()]);
        assert_eq!(mask.invalid_fraction(4), 1.0);
        assert!(mask.invalid_fraction(2) > 0.0, "burst not rejected");
        assert!(mask.invalid_fraction(2) < 0.2);
        // masked entries are exactly zero after normalization
        for t in 0..prepared.eeg.nrows() {
            for c in 0..prepared.eeg.ncols() {
                if !mask.is_valid(t, c) {
                    assert_eq!(prepared.eeg[[t, c]], 0.0);
                }
            }
        }
        // Frobenius norm over valid entries is 1
        let norm: f64 = prepared
            .eeg
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!((norm - 1.0).abs() < 1e-9, "norm {norm}");
    }
}

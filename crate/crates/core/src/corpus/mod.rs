//! Canonical data model: montage, trials, recordings, validity masks,
//! the on-disk dataset format, and the synthetic forward-model generator.

mod io;
mod synth;

pub use io::{load_dataset, load_recording, write_dataset, write_recording};
pub use synth::{
    generate_synthetic, synthetic_envelope, synthetic_recording, PLANTED_CHANNEL_GAIN, SynthSpec,
};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON at {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("participant {participant}: expected 6 trials, found {found}")]
    TrialCount { participant: String, found: usize },
    #[error("participant {participant}, trial {trial}: {message}")]
    BadTrial {
        participant: String,
        trial: usize,
        message: String,
    },
    #[error("unknown channel label '{label}'; valid labels: {valid:?}")]
    UnknownChannel { label: String, valid: Vec<String> },
    #[error("montage invalid: {0}")]
    BadMontage(String),
    #[error("recording invalid: {0}")]
    BadRecording(String),
    #[error("synthetic spec invalid: {0}")]
    BadSynthSpec(String),
}

/// Index of a channel within a montage's channel order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct ChannelId(pub usize);

/// Which recording (sub)system a channel belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setup {
    Scalp,
    AroundEarLeft,
    AroundEarRight,
    InEarLeft,
    InEarRight,
    Eog,
    SharedFp1,
}

impl Setup {
    /// True for the two around-ear and two in-ear tags.
    pub fn is_ear(self) -> bool {
        matches!(
            self,
            Setup::AroundEarLeft | Setup::AroundEarRight | Setup::InEarLeft | Setup::InEarRight
        )
    }
}

/// Attended stream side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// Visual condition during a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Video,
    Fixation,
}

/// Ordered channel list with per-channel setup tags and position labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Montage {
    channel_labels: Vec<String>,
    setup_tags: Vec<Setup>,
}

impl Montage {
    pub fn new(channels: Vec<(String, Setup)>) -> Result<Self, CorpusError> {
        let (channel_labels, setup_tags): (Vec<_>, Vec<_>) = channels.into_iter().unzip();
        let montage = Self {
            channel_labels,
            setup_tags,
        };
        montage.validate()?;
        Ok(montage)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.channel_labels.len() != self.setup_tags.len() {
            return Err(CorpusError::BadMontage(
                "label and setup counts differ".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for label in &self.channel_labels {
            if !seen.insert(label.clone()) {
                return Err(CorpusError::BadMontage(format!(
                    "duplicate channel label '{label}'"
                )));
            }
        }
        // EOG channels are recorded by the scalp amplifier, so they can
        // only be present alongside scalp channels
        let has_eog = self.setup_tags.iter().any(|s| *s == Setup::Eog);
        let has_scalp = self.setup_tags.iter().any(|s| *s == Setup::Scalp);
        if has_eog && !has_scalp {
            return Err(CorpusError::BadMontage(
                "EOG channels require a scalp system".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.channel_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channel_labels.is_empty()
    }

    pub fn channels(&self) -> impl Iterator<Item = ChannelId> + '_ {
        (0..self.len()).map(ChannelId)
    }

    pub fn label(&self, id: ChannelId) -> &str {
        &self.channel_labels[id.0]
    }

    pub fn setup(&self, id: ChannelId) -> Setup {
        self.setup_tags[id.0]
    }

    pub fn find(&self, label: &str) -> Option<ChannelId> {
        self.channel_labels
            .iter()
            .position(|l| l == label)
            .map(ChannelId)
    }

    /// Channels carrying the given setup tag, in montage order.
    pub fn channels_in(&self, setup: Setup) -> Vec<ChannelId> {
        self.channels().filter(|c| self.setup(*c) == setup).collect()
    }

    pub fn labels(&self) -> &[String] {
        &self.channel_labels
    }

    /// The 64-channel recording layout used throughout: 29 scalp
    /// electrodes (10-20 positions) plus 3 EOG, 19 around-ear, 12 in-ear,
    /// and the shared Fp1 electrode of the ear amplifier.
    pub fn standard() -> Self {
        let mut channels = Vec::new();
        for label in [
            "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FC5", "FC1", "FC2", "FC6", "T7", "C3",
            "Cz", "C4", "T8", "CP5", "CP1", "CP2", "CP6", "P7", "P3", "Pz", "P4", "P8", "POz",
            "O1", "Oz", "O2",
        ] {
            channels.push((label.to_string(), Setup::Scalp));
        }
        for label in ["EOG1", "EOG2", "EOG3"] {
            channels.push((label.to_string(), Setup::Eog));
        }
        for i in 1..=9 {
            channels.push((format!("cEL{i}"), Setup::AroundEarLeft));
        }
        for i in 1..=10 {
            channels.push((format!("cER{i}"), Setup::AroundEarRight));
        }
        for label in ["ELI", "ELE", "ELT", "ELA", "ELB", "ELC"] {
            channels.push((label.to_string(), Setup::InEarLeft));
        }
        for label in ["ERI", "ERE", "ERT", "ERA", "ERB", "ERC"] {
            channels.push((label.to_string(), Setup::InEarRight));
        }
        channels.push(("xFp1".to_string(), Setup::SharedFp1));
        Self::new(channels).expect("standard montage is valid")
    }

    /// Minimal all-scalp montage for synthetic data.
    pub fn synthetic(n_channels: usize) -> Self {
        let channels = (0..n_channels)
            .map(|i| (format!("S{:02}", i + 1), Setup::Scalp))
            .collect();
        Self::new(channels).expect("synthetic montage is valid")
    }
}

/// One trial: EEG (time x channels) plus the two competing stream
/// envelopes, already at the post-preprocessing rate.
#[derive(Debug, Clone)]
pub struct Trial {
    pub eeg: Array2<f64>,
    pub sample_rate_hz: f64,
    pub attended_envelope: Array1<f64>,
    pub unattended_envelope: Array1<f64>,
    pub attended_side: Side,
    pub condition: Condition,
}

impl Trial {
    pub fn duration_s(&self) -> f64 {
        self.eeg.nrows() as f64 / self.sample_rate_hz
    }

    pub fn n_channels(&self) -> usize {
        self.eeg.ncols()
    }

    pub fn validate(&self, n_channels: usize) -> Result<(), CorpusError> {
        if self.eeg.ncols() != n_channels {
            return Err(CorpusError::BadRecording(format!(
                "trial has {} channels, montage has {n_channels}",
                self.eeg.ncols()
            )));
        }
        if self.attended_envelope.len() != self.unattended_envelope.len() {
            return Err(CorpusError::BadRecording(format!(
                "envelope lengths differ: {} vs {}",
                self.attended_envelope.len(),
                self.unattended_envelope.len()
            )));
        }
        Ok(())
    }

    /// Envelope of the left-ear stream (speaker 1 in decisions).
    pub fn left_envelope(&self) -> &Array1<f64> {
        match self.attended_side {
            Side::Left => &self.attended_envelope,
            Side::Right => &self.unattended_envelope,
        }
    }

    /// Envelope of the right-ear stream (speaker 2 in decisions).
    pub fn right_envelope(&self) -> &Array1<f64> {
        match self.attended_side {
            Side::Left => &self.unattended_envelope,
            Side::Right => &self.attended_envelope,
        }
    }
}

/// One participant: montage plus exactly six trials with balanced
/// attended sides and conditions.
#[derive(Debug, Clone)]
pub struct Recording {
    pub participant_id: String,
    pub montage: Montage,
    pub sample_rate_hz: f64,
    pub trials: Vec<Trial>,
}

impl Recording {
    pub fn validate(&self) -> Result<(), CorpusError> {
        self.montage.validate()?;
        if self.trials.len() != 6 {
            return Err(CorpusError::TrialCount {
                participant: self.participant_id.clone(),
                found: self.trials.len(),
            });
        }
        for (i, t) in self.trials.iter().enumerate() {
            t.validate(self.montage.len())
                .map_err(|e| CorpusError::BadTrial {
                    participant: self.participant_id.clone(),
                    trial: i + 1,
                    message: e.to_string(),
                })?;
        }
        let left = self
            .trials
            .iter()
            .filter(|t| t.attended_side == Side::Left)
            .count();
        if left != 3 {
            return Err(CorpusError::BadRecording(format!(
                "attended side not balanced: {left} left of 6"
            )));
        }
        let video = self
            .trials
            .iter()
            .filter(|t| t.condition == Condition::Video)
            .count();
        if video != 3 {
            return Err(CorpusError::BadRecording(format!(
                "condition not balanced: {video} video of 6"
            )));
        }
        Ok(())
    }
}

/// Per-sample, per-channel validity carried through the cleaning chain.
/// A fully-false column marks a removed channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMask {
    pub valid: Array2<bool>,
}

impl SampleMask {
    pub fn all_valid(n_samples: usize, n_channels: usize) -> Self {
        Self {
            valid: Array2::from_elem((n_samples, n_channels), true),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.valid.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.valid.ncols()
    }

    pub fn is_valid(&self, t: usize, c: usize) -> bool {
        self.valid[[t, c]]
    }

    pub fn invalidate_channel(&mut self, c: usize) {
        self.valid.column_mut(c).fill(false);
    }

    pub fn invalidate_range(&mut self, c: usize, range: std::ops::Range<usize>) {
        for t in range {
            self.valid[[t, c]] = false;
        }
    }

    /// Channels whose entire column is invalid.
    pub fn removed_channels(&self) -> Vec<usize> {
        (0..self.n_channels())
            .filter(|&c| self.valid.column(c).iter().all(|v| !v))
            .collect()
    }

    /// Fraction of invalid samples per channel.
    pub fn invalid_fraction(&self, c: usize) -> f64 {
        let col = self.valid.column(c);
        let invalid = col.iter().filter(|v| !**v).count();
        invalid as f64 / col.len() as f64
    }

    /// Number of valid samples in the whole mask.
    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// True if every entry is valid.
    pub fn is_all_valid(&self) -> bool {
        self.valid.iter().all(|v| *v)
    }

    /// Keeps every `factor`-th sample row.
    pub fn decimate(&self, factor: usize) -> Self {
        let rows: Vec<_> = (0..self.n_samples()).step_by(factor).collect();
        Self {
            valid: self.valid.select(ndarray::Axis(0), &rows),
        }
    }

    /// Restricts the mask to the given channel columns.
    pub fn select_channels(&self, columns: &[usize]) -> Self {
        Self {
            valid: self.valid.select(ndarray::Axis(1), columns),
        }
    }
}

//! On-disk dataset format.
//!
//! Layout: one directory per participant under the dataset root. Per
//! trial `K` (1-based): `trialK_eeg.f32` (little-endian f32, channel
//! major: all samples of channel 0, then channel 1, ...),
//! `trialK_env_att.f32`, `trialK_env_un.f32`, and a JSON sidecar
//! `trialK_meta.json`. A top-level `montage.json` duplicates the channel
//! metadata shared by all participants.

use super::{Condition, CorpusError, Montage, Recording, Side, Trial};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct TrialMeta {
    participant_id: String,
    trial_index: usize,
    sample_rate_hz: f64,
    n_channels: usize,
    n_samples: usize,
    channel_labels: Vec<String>,
    setup_tags: Vec<super::Setup>,
    attended_side: Side,
    condition: Condition,
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_f32_file(path: &Path) -> Result<Vec<f64>, CorpusError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(CorpusError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "file size is not a multiple of 4 bytes",
            ),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn write_f32_file(path: &Path, values: impl Iterator<Item = f64>) -> Result<(), CorpusError> {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| io_err(path, e))
}

/// Writes one recording into `root/<participant_id>/`.
pub fn write_recording(root: &Path, recording: &Recording) -> Result<(), CorpusError> {
    recording.validate()?;
    let dir = root.join(&recording.participant_id);
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    for (i, trial) in recording.trials.iter().enumerate() {
        let k = i + 1;
        // channel-major payload
        let eeg = &trial.eeg;
        let columns = (0..eeg.ncols()).flat_map(|c| eeg.column(c).to_vec());
        write_f32_file(&dir.join(format!("trial{k}_eeg.f32")), columns)?;
        write_f32_file(
            &dir.join(format!("trial{k}_env_att.f32")),
            trial.attended_envelope.iter().copied(),
        )?;
        write_f32_file(
            &dir.join(format!("trial{k}_env_un.f32")),
            trial.unattended_envelope.iter().copied(),
        )?;
        let meta = TrialMeta {
            participant_id: recording.participant_id.clone(),
            trial_index: k,
            sample_rate_hz: trial.sample_rate_hz,
            n_channels: eeg.ncols(),
            n_samples: eeg.nrows(),
            channel_labels: recording.montage.labels().to_vec(),
            setup_tags: recording
                .montage
                .channels()
                .map(|c| recording.montage.setup(c))
                .collect(),
            attended_side: trial.attended_side,
            condition: trial.condition,
        };
        let meta_path = dir.join(format!("trial{k}_meta.json"));
        let json = serde_json::to_string_pretty(&meta).map_err(|e| CorpusError::Json {
            path: meta_path.display().to_string(),
            source: e,
        })?;
        fs::write(&meta_path, json).map_err(|e| io_err(&meta_path, e))?;
    }
    Ok(())
}

/// Writes a full dataset (all recordings plus the top-level montage).
pub fn write_dataset(root: &Path, recordings: &[Recording]) -> Result<(), CorpusError> {
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    for rec in recordings {
        write_recording(root, rec)?;
    }
    if let Some(first) = recordings.first() {
        let montage_path = root.join("montage.json");
        let json =
            serde_json::to_string_pretty(&first.montage).map_err(|e| CorpusError::Json {
                path: montage_path.display().to_string(),
                source: e,
            })?;
        fs::write(&montage_path, json).map_err(|e| io_err(&montage_path, e))?;
    }
    Ok(())
}

/// Loads one participant directory against a known montage.
pub fn load_recording(
    dir: &Path,
    montage: &Montage,
    participant_id: &str,
) -> Result<Recording, CorpusError> {
    let mut trials = Vec::new();
    let mut sample_rate = None;
    for k in 1..=6usize {
        let meta_path = dir.join(format!("trial{k}_meta.json"));
        if !meta_path.exists() {
            return Err(CorpusError::TrialCount {
                participant: participant_id.to_string(),
                found: k - 1,
            });
        }
        let meta_str = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
        let meta: TrialMeta = serde_json::from_str(&meta_str).map_err(|e| CorpusError::Json {
            path: meta_path.display().to_string(),
            source: e,
        })?;
        for label in &meta.channel_labels {
            if montage.find(label).is_none() {
                return Err(CorpusError::UnknownChannel {
                    label: label.clone(),
                    valid: montage.labels().to_vec(),
                });
            }
        }
        if meta.channel_labels.len() != montage.len() {
            return Err(CorpusError::BadTrial {
                participant: participant_id.to_string(),
                trial: k,
                message: format!(
                    "sidecar lists {} channels, montage has {}",
                    meta.channel_labels.len(),
                    montage.len()
                ),
            });
        }
        let raw = read_f32_file(&dir.join(format!("trial{k}_eeg.f32")))?;
        if raw.len() != meta.n_samples * meta.n_channels {
            return Err(CorpusError::BadTrial {
                participant: participant_id.to_string(),
                trial: k,
                message: format!(
                    "EEG payload has {} values, metadata says {} samples x {} channels",
                    raw.len(),
                    meta.n_samples,
                    meta.n_channels
                ),
            });
        }
        // channel-major on disk -> time x channels in memory
        let mut eeg = Array2::<f64>::zeros((meta.n_samples, meta.n_channels));
        for c in 0..meta.n_channels {
            for t in 0..meta.n_samples {
                eeg[[t, c]] = raw[c * meta.n_samples + t];
            }
        }
        let att = read_f32_file(&dir.join(format!("trial{k}_env_att.f32")))?;
        let un = read_f32_file(&dir.join(format!("trial{k}_env_un.f32")))?;
        if att.len() != un.len() {
            return Err(CorpusError::BadTrial {
                participant: participant_id.to_string(),
                trial: k,
                message: format!("envelope lengths differ: {} vs {}", att.len(), un.len()),
            });
        }
        sample_rate.get_or_insert(meta.sample_rate_hz);
        trials.push(Trial {
            eeg,
            sample_rate_hz: meta.sample_rate_hz,
            attended_envelope: Array1::from_vec(att),
            unattended_envelope: Array1::from_vec(un),
            attended_side: meta.attended_side,
            condition: meta.condition,
        });
    }
    let recording = Recording {
        participant_id: participant_id.to_string(),
        montage: montage.clone(),
        sample_rate_hz: sample_rate.unwrap_or(0.0),
        trials,
    };
    recording.validate()?;
    Ok(recording)
}

/// Loads every participant directory under `root`, sorted by name.
pub fn load_dataset(root: &Path) -> Result<Vec<Recording>, CorpusError> {
    let montage_path = root.join("montage.json");
    let montage_str = fs::read_to_string(&montage_path).map_err(|e| io_err(&montage_path, e))?;
    let montage: Montage =
        serde_json::from_str(&montage_str).map_err(|e| CorpusError::Json {
            path: montage_path.display().to_string(),
            source: e,
        })?;
    montage.validate()?;

    let mut dirs: Vec<_> = fs::read_dir(root)
        .map_err(|e| io_err(root, e))?
        .filter_map(|entry| entry.ok())
        .filter(|entry| entry.path().is_dir())
        .map(|entry| entry.path())
        .collect();
    dirs.sort();

    let mut recordings = Vec::new();
    for dir in dirs {
        let participant_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_default();
        recordings.push(load_recording(&dir, &montage, &participant_id)?);
    }
    if recordings.is_empty() {
        return Err(CorpusError::BadRecording(format!(
            "no participant directories under {}",
            root.display()
        )));
    }
    Ok(recordings)
}

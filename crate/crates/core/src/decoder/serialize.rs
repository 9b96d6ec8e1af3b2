//! Decoder file format: a little-endian u32 header length, a JSON header
//! (channel set, lag grid, shrinkage), then the weight vector as
//! little-endian f64.

use super::{Decoder, DecoderError, LagGrid, Shrinkage};
use crate::corpus::ChannelId;
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct Header {
    channels: Vec<usize>,
    lag_grid: LagGrid,
    shrinkage: Shrinkage,
    n_weights: usize,
}

fn io_err(path: &Path, source: std::io::Error) -> DecoderError {
    DecoderError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_decoder(path: &Path, decoder: &Decoder) -> Result<(), DecoderError> {
    let header = Header {
        channels: decoder.channels.iter().map(|c| c.0).collect(),
        lag_grid: decoder.lag_grid,
        shrinkage: decoder.shrinkage,
        n_weights: decoder.weights.len(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| DecoderError::BadFile(format!("header serialization failed: {e}")))?;
    let mut bytes = Vec::with_capacity(4 + header_json.len() + 8 * decoder.weights.len());
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for w in decoder.weights.iter() {
        bytes.extend_from_slice(&w.to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| io_err(path, e))
}

pub fn load_decoder(path: &Path) -> Result<Decoder, DecoderError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    if bytes.len() < 4 {
        return Err(DecoderError::BadFile("file shorter than header length".into()));
    }
    let header_len = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if bytes.len() < 4 + header_len {
        return Err(DecoderError::BadFile("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[4..4 + header_len])
        .map_err(|e| DecoderError::BadFile(format!("malformed header: {e}")))?;
    let payload = &bytes[4 + header_len..];
    if payload.len() != 8 * header.n_weights {
        return Err(DecoderError::BadFile(format!(
            "expected {} weight bytes, found {}",
            8 * header.n_weights,
            payload.len()
        )));
    }
    if header.channels.len() * header.lag_grid.n_taps != header.n_weights {
        return Err(DecoderError::BadFile(format!(
            "{} channels x {} taps does not match {} weights",
            header.channels.len(),
            header.lag_grid.n_taps,
            header.n_weights
        )));
    }
    let weights: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Decoder {
        weights: Array1::from_vec(weights),
        channels: header.channels.into_iter().map(ChannelId).collect(),
        lag_grid: header.lag_grid,
        shrinkage: header.shrinkage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoder_file_roundtrip_is_exact() {
        let d = Decoder {
            weights: Array1::from_vec(vec![0.1, -2.5, 3.25e-7, 1.0 / 3.0, 0.0, -1.0]),
            channels: vec![ChannelId(4), ChannelId(9)],
            lag_grid: LagGrid::new(20.0, (0.0, 100.0)).unwrap(),
            shrinkage: Shrinkage {
                rho: 0.123,
                mu: 4.56,
            },
        };
        assert_eq!(d.lag_grid.n_taps, 3);
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("decoder.bin");
        save_decoder(&path, &d).unwrap();
        let loaded = load_decoder(&path).unwrap();
        assert_eq!(loaded.weights, d.weights);
        assert_eq!(loaded.channels, d.channels);
        assert_eq!(loaded.lag_grid, d.lag_grid);
        assert_eq!(loaded.shrinkage, d.shrinkage);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let d = Decoder {
            weights: Array1::from_vec(vec![1.0, 2.0]),
            channels: vec![ChannelId(0), ChannelId(1)],
            lag_grid: LagGrid::new(20.0, (0.0, 0.0)).unwrap(),
            shrinkage: Shrinkage { rho: 0.5, mu: 1.0 },
        };
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("decoder.bin");
        save_decoder(&path, &d).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        assert!(load_decoder(&path).is_err());
    }
}

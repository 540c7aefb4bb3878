//! Per-utterance binary feature records.
//!
//! Layout (little-endian): `"FEAT"`, version `u16`, dim `u32`, frames `u32`,
//! config hash `u64`, then `frames × dim` row-major `f32` values.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::{FeatureConfig, FeatureMatrix};

pub const FEAT_MAGIC: &[u8; 4] = b"FEAT";
pub const FEAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("not a feature record (bad magic)")]
    BadMagic,
    #[error("unsupported feature record version {0}")]
    VersionMismatch(u16),
    #[error("truncated or oversized feature record: expected {expected} bytes, got {got}")]
    Length { expected: u64, got: u64 },
    #[error("feature record hash {found:016x} does not match config hash {expected:016x}")]
    HashMismatch { expected: u64, found: u64 },
    #[error("feature record dim {found} does not match config dim {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("non-finite value in feature record")]
    NonFinite,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheHeader {
    pub version: u16,
    pub dim: u32,
    pub frames: u32,
    pub config_hash: u64,
}

pub fn encode_record(features: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * features.values.len());
    out.extend_from_slice(FEAT_MAGIC);
    out.extend_from_slice(&FEAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(features.dim as u32).to_le_bytes());
    out.extend_from_slice(&(features.num_frames as u32).to_le_bytes());
    out.extend_from_slice(&features.config.config_hash().to_le_bytes());
    for v in &features.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Parses a record without interpreting the hash.
pub fn decode_record(bytes: &[u8]) -> Result<(CacheHeader, Vec<f64>), CacheError> {
    if bytes.len() < 4 || &bytes[..4] != FEAT_MAGIC {
        return Err(CacheError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(CacheError::Length {
            expected: HEADER_LEN as u64,
            got: bytes.len() as u64,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FEAT_VERSION {
        return Err(CacheError::VersionMismatch(version));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let dim = u32_at(6);
    let frames = u32_at(10);
    let config_hash = u64::from_le_bytes(bytes[14..22].try_into().unwrap());
    let expected = (dim as u64)
        .checked_mul(frames as u64)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .unwrap_or(u64::MAX);
    if bytes.len() as u64 != expected {
        return Err(CacheError::Length {
            expected,
            got: bytes.len() as u64,
        });
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CacheError::NonFinite);
    }
    Ok((
        CacheHeader {
            version,
            dim,
            frames,
            config_hash,
        },
        values,
    ))
}

pub fn write_record(path: impl AsRef<Path>, features: &FeatureMatrix) -> Result<(), CacheError> {
    std::fs::write(path, encode_record(features))?;
    Ok(())
}

/// Loads a record, rejecting it unless it was produced under `config`.
pub fn read_record(
    path: impl AsRef<Path>,
    config: &FeatureConfig,
    utt_id: &str,
) -> Result<FeatureMatrix, CacheError> {
    let bytes = std::fs::read(path)?;
    let (header, values) = decode_record(&bytes)?;
    let expected = config.config_hash();
    if header.config_hash != expected {
        return Err(CacheError::HashMismatch {
            expected,
            found: header.config_hash,
        });
    }
    if header.dim as usize != config.dim() {
        return Err(CacheError::DimMismatch {
            expected: config.dim(),
            found: header.dim as usize,
        });
    }
    Ok(FeatureMatrix {
        values,
        num_frames: header.frames as usize,
        dim: header.dim as usize,
        config: config.clone(),
        utt_id: utt_id.to_string(),
    })
}

/// One frame per line, comma separated.
pub fn to_csv(features: &FeatureMatrix) -> String {
    let mut out = String::new();
    for row in features.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

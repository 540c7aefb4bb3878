//! Cepstral front-ends: MFCC, LFCC and CQCC with delta dynamics.

mod cache;
mod cepstral;
mod cqcc;
mod dct;
mod dynamics;
mod filterbank;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioClip, AudioError, FrameConfig};

pub use cache::{
    decode_record, encode_record, read_record, to_csv, write_record, CacheError, CacheHeader,
    FEAT_MAGIC, FEAT_VERSION,
};
pub use cepstral::{cepstra_with_filterbank, filterbank_energies, lfcc, mfcc, power_spectrum};
pub use cqcc::{cqcc, cqt, interp_log_spectrum, uniform_grid, Cqt, CqtGeometry};
pub use dct::Dct2;
pub use dynamics::{deltas, stack_dynamics};
pub use filterbank::{build_filterbank, hz_to_mel, mel_scale, mel_to_hz, FilterScale, Filterbank};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid feature configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate filterbank: {0}")]
    DegenerateBand(String),
    #[error("CQT window of {window} samples exceeds the {samples}-sample clip")]
    WindowExceedsSignal { window: usize, samples: usize },
    #[error("feature kind mismatch: expected {expected:?}, got {got:?}")]
    KindMismatch { expected: FeatureKind, got: FeatureKind },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Mfcc,
    Lfcc,
    Cqcc,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [FeatureKind::Mfcc, FeatureKind::Lfcc, FeatureKind::Cqcc];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::Lfcc => "lfcc",
            FeatureKind::Cqcc => "cqcc",
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mfcc" => Ok(FeatureKind::Mfcc),
            "lfcc" => Ok(FeatureKind::Lfcc),
            "cqcc" => Ok(FeatureKind::Cqcc),
            other => Err(format!("unknown feature kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    Static,
    Delta,
    DeltaDelta,
}

impl Dynamics {
    pub fn multiplier(self) -> usize {
        match self {
            Dynamics::Static => 1,
            Dynamics::Delta => 2,
            Dynamics::DeltaDelta => 3,
        }
    }
}

/// Everything that determines a feature matrix for a given clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub kind: FeatureKind,
    pub num_ceps: usize,
    pub include_c0: bool,
    pub dynamics: Dynamics,
    pub num_filters: usize,
    pub fft_size: usize,
    pub fmin: f64,
    /// Upper band edge; `None` means the Nyquist frequency.
    pub fmax: Option<f64>,
    pub cqt_bins_per_octave: usize,
    pub cqt_octaves: usize,
    pub resample_period: usize,
    pub log_floor: f64,
    pub frame: FrameConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            kind: FeatureKind::Mfcc,
            num_ceps: 20,
            include_c0: false,
            dynamics: Dynamics::DeltaDelta,
            num_filters: 40,
            fft_size: 512,
            fmin: 0.0,
            fmax: None,
            cqt_bins_per_octave: 96,
            cqt_octaves: 9,
            resample_period: 16,
            log_floor: 1e-10,
            frame: FrameConfig::default(),
        }
    }
}

impl FeatureConfig {
    pub fn new(kind: FeatureKind) -> Self {
        Self {
            kind,
            ..Default::default()
        }
    }

    /// Width of one output row.
    pub fn dim(&self) -> usize {
        self.num_ceps * self.dynamics.multiplier()
    }

    /// Index of the first cepstral coefficient kept.
    pub(crate) fn first_cep(&self) -> usize {
        usize::from(!self.include_c0)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: String| Err(FeatureError::InvalidConfig(m));
        if self.num_ceps == 0 {
            return bad("num_ceps must be positive".into());
        }
        if self.log_floor.is_nan() || self.log_floor <= 0.0 {
            return bad(format!("log_floor must be > 0, got {}", self.log_floor));
        }
        match self.kind {
            FeatureKind::Mfcc | FeatureKind::Lfcc => {
                if self.num_ceps + self.first_cep() > self.num_filters {
                    return bad(format!(
                        "{} cepstra (c0 {}) exceed {} filters",
                        self.num_ceps,
                        if self.include_c0 { "kept" } else { "dropped" },
                        self.num_filters
                    ));
                }
                if !self.fft_size.is_power_of_two() {
                    return bad(format!("fft_size {} is not a power of two", self.fft_size));
                }
            }
            FeatureKind::Cqcc => {
                if self.cqt_bins_per_octave == 0 || self.cqt_octaves == 0 {
                    return bad("CQT geometry needs bins_per_octave, octaves > 0".into());
                }
                if self.resample_period < 2 {
                    return bad("resample_period must be at least 2".into());
                }
                let points = self.resample_period * self.cqt_octaves;
                if self.num_ceps + self.first_cep() > points {
                    return bad(format!(
                        "{} cepstra exceed {} uniformly resampled points",
                        self.num_ceps, points
                    ));
                }
            }
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a hash of the canonical JSON form.
    pub fn config_hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("feature config serializes");
        fnv1a(json.as_bytes())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Frame-level features of one utterance, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Vec<f64>,
    pub num_frames: usize,
    pub dim: usize,
    pub config: FeatureConfig,
    pub utt_id: String,
}

impl FeatureMatrix {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim.max(1))
    }

    pub fn get(&self, t: usize, j: usize) -> f64 {
        self.values[t * self.dim + j]
    }
}

/// Runs the configured front-end on a clip.
pub fn extract(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    match cfg.kind {
        FeatureKind::Mfcc | FeatureKind::Lfcc => {
            let frames = crate::audio::frame_and_window(clip, &cfg.frame)?;
            if cfg.kind == FeatureKind::Mfcc {
                mfcc(&frames, cfg, clip.sample_rate_hz, &clip.utt_id)
            } else {
                lfcc(&frames, cfg, clip.sample_rate_hz, &clip.utt_id)
            }
        }
        FeatureKind::Cqcc => cqcc(clip, cfg),
    }
}

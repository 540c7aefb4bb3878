//! Audio ingestion: WAV decoding, rate conversion and short-time framing.

use std::f64::consts::PI;
use std::io::{Cursor, Read, Seek};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sample rates admitted without conversion.
pub const SUPPORTED_RATES: [u32; 5] = [8000, 16000, 22050, 44100, 48000];

/// Rate every pipeline normalizes to.
pub const CANONICAL_RATE: u32 = 16000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed RIFF/WAVE container: {0}")]
    MalformedContainer(String),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("audio contains no samples")]
    EmptyAudio,
    #[error("clip has {samples} samples, shorter than one {frame_len}-sample frame")]
    ClipTooShort { samples: usize, frame_len: usize },
    #[error("invalid framing parameters: {0}")]
    InvalidFraming(String),
    #[error("invalid sample rate {0}")]
    InvalidRate(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub utt_id: String,
}

impl AudioClip {
    pub fn new(utt_id: impl Into<String>, samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Self {
            samples,
            sample_rate_hz,
            utt_id: utt_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

fn map_hound(err: hound::Error) -> AudioError {
    match err {
        hound::Error::Unsupported => AudioError::UnsupportedEncoding("codec not supported".into()),
        hound::Error::IoError(e) => AudioError::MalformedContainer(e.to_string()),
        other => AudioError::MalformedContainer(other.to_string()),
    }
}

fn decode<R: Read + Seek>(reader: R, utt_id: &str) -> Result<AudioClip, AudioError> {
    let mut wav = hound::WavReader::new(reader).map_err(map_hound)?;
    let spec = wav.spec();
    let channels = spec.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(AudioError::UnsupportedEncoding(format!(
            "{channels} channels"
        )));
    }
    if spec.sample_rate == 0 {
        return Err(AudioError::MalformedContainer("zero sample rate".into()));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => wav
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (hound::SampleFormat::Float, 32) => wav
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (fmt, bits) => {
            return Err(AudioError::UnsupportedEncoding(format!(
                "{bits}-bit {fmt:?}"
            )))
        }
    };

    if interleaved.iter().any(|v| !v.is_finite()) {
        return Err(AudioError::MalformedContainer("non-finite sample".into()));
    }
    let mut samples: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|lr| 0.5 * (lr[0] + lr[1]))
            .collect()
    };
    if samples.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    // Float files may exceed full scale.
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        samples.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(AudioClip::new(utt_id, samples, spec.sample_rate))
}

/// Decodes an in-memory RIFF/WAVE image (PCM16 or float32, mono or stereo).
pub fn decode_wav(bytes: &[u8], utt_id: &str) -> Result<AudioClip, AudioError> {
    decode(Cursor::new(bytes), utt_id)
}

/// Reads a WAV file into a mono clip; the utterance id is the file stem.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    let utt_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    decode(file, &utt_id)
}

/// Reads a WAV file and converts it to the canonical 16 kHz rate when the
/// stored rate is not one of [`SUPPORTED_RATES`] or differs from it.
pub fn load_clip(path: impl AsRef<Path>, utt_id: &str) -> Result<AudioClip, AudioError> {
    let mut clip = read_wav(path)?;
    clip.utt_id = utt_id.to_string();
    if clip.sample_rate_hz != CANONICAL_RATE {
        clip = resample(&clip, CANONICAL_RATE)?;
    }
    Ok(clip)
}

fn pcm16(v: f64) -> i16 {
    (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Encodes a clip as mono PCM16 WAV bytes.
pub fn encode_wav(clip: &AudioClip) -> Result<Vec<u8>, AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::with_capacity(44 + 2 * clip.len()));
    {
        let mut w = hound::WavWriter::new(&mut buf, spec).map_err(map_hound)?;
        for &s in &clip.samples {
            w.write_sample(pcm16(s)).map_err(map_hound)?;
        }
        w.finalize().map_err(map_hound)?;
    }
    Ok(buf.into_inner())
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), AudioError> {
    std::fs::write(path, encode_wav(clip)?)?;
    Ok(())
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > 1e-17 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

const KAISER_BETA: f64 = 8.0;
const ZERO_CROSSINGS: f64 = 32.0;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Polyphase windowed-sinc rational resampler: output rate = input rate · up / down.
///
/// The kernel is a Kaiser-windowed sinc (beta 8) spanning 32 zero crossings
/// per side at the lower of the two Nyquist rates. Each phase is normalized
/// to unit DC gain and edges are handled by sample replication, so constant
/// signals pass through unchanged.
pub fn resample_rational(samples: &[f64], up: u64, down: u64) -> Vec<f64> {
    assert!(up > 0 && down > 0, "resampling factors must be positive");
    let g = gcd(up, down);
    let (up, down) = (up / g, down / g);
    if up == down || samples.is_empty() {
        return samples.to_vec();
    }
    let n_in = samples.len() as u64;
    let n_out = ((n_in * up + down / 2) / down).max(1) as usize;

    // Cutoff relative to the input Nyquist rate.
    let cutoff = (up as f64 / down as f64).min(1.0);
    let half_width = (ZERO_CROSSINGS / cutoff).ceil() as i64;
    let taps = (2 * half_width + 1) as usize;
    let i0_beta = bessel_i0(KAISER_BETA);

    // Phase p corresponds to a fractional input offset p/up.
    let phases: Vec<Vec<f64>> = (0..up)
        .map(|p| {
            let frac = p as f64 / up as f64;
            let mut h: Vec<f64> = (0..taps)
                .map(|j| {
                    let tau = (j as i64 - half_width) as f64 - frac;
                    let r = tau / (half_width as f64 + 1.0);
                    if r.abs() >= 1.0 {
                        return 0.0;
                    }
                    let win = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
                    let arg = PI * cutoff * tau;
                    let sinc = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
                    cutoff * sinc * win
                })
                .collect();
            let sum: f64 = h.iter().sum();
            h.iter_mut().for_each(|v| *v /= sum);
            h
        })
        .collect();

    let last = samples.len() as i64 - 1;
    (0..n_out as u64)
        .map(|m| {
            let pos = m * down;
            let base = (pos / up) as i64;
            let phase = (pos % up) as usize;
            let h = &phases[phase];
            let start = base - half_width;
            if start >= 0 && start + taps as i64 - 1 <= last {
                let seg = &samples[start as usize..start as usize + taps];
                seg.iter().zip(h).map(|(x, w)| x * w).sum()
            } else {
                h.iter()
                    .enumerate()
                    .map(|(j, w)| samples[(start + j as i64).clamp(0, last) as usize] * w)
                    .sum()
            }
        })
        .collect()
}

/// Converts `clip` to `target_hz`. Identity when the rates already match.
pub fn resample(clip: &AudioClip, target_hz: u32) -> Result<AudioClip, AudioError> {
    if target_hz == 0 {
        return Err(AudioError::InvalidRate(target_hz));
    }
    if clip.sample_rate_hz == 0 {
        return Err(AudioError::InvalidRate(clip.sample_rate_hz));
    }
    if clip.sample_rate_hz == target_hz {
        return Ok(clip.clone());
    }
    let samples = resample_rational(&clip.samples, target_hz as u64, clip.sample_rate_hz as u64);
    Ok(AudioClip::new(clip.utt_id.clone(), samples, target_hz))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hamming,
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Symmetric window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![1.0];
        }
        let denom = (n - 1) as f64;
        (0..n)
            .map(|i| {
                let c = (2.0 * PI * i as f64 / denom).cos();
                match self {
                    WindowKind::Hamming => 0.54 - 0.46 * c,
                    WindowKind::Hann => 0.5 - 0.5 * c,
                    WindowKind::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

/// Short-time analysis parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub window: WindowKind,
    pub preemph: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            hop_ms: 10.0,
            window: WindowKind::Hamming,
            preemph: 0.97,
        }
    }
}

impl FrameConfig {
    pub fn frame_len(&self, rate: u32) -> usize {
        (self.frame_ms * rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self, rate: u32) -> usize {
        (self.hop_ms * rate as f64 / 1000.0).round() as usize
    }
}

/// Windowed frames stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    data: Vec<f64>,
    pub num_frames: usize,
    pub frame_len: usize,
    pub hop_len: usize,
    pub window_kind: WindowKind,
}

impl FrameMatrix {
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.frame_len..(i + 1) * self.frame_len]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.frame_len)
    }
}

/// Number of full frames that fit in `len` samples.
pub fn frame_count(len: usize, frame_len: usize, hop_len: usize) -> usize {
    if len < frame_len {
        0
    } else {
        (len - frame_len) / hop_len + 1
    }
}

/// Applies pre-emphasis, slices overlapping frames and multiplies each by the window.
pub fn frame_and_window(clip: &AudioClip, cfg: &FrameConfig) -> Result<FrameMatrix, AudioError> {
    if !(cfg.hop_ms > 0.0 && cfg.hop_ms <= cfg.frame_ms) {
        return Err(AudioError::InvalidFraming(format!(
            "need 0 < hop_ms <= frame_ms, got hop {} frame {}",
            cfg.hop_ms, cfg.frame_ms
        )));
    }
    if !(0.0..1.0).contains(&cfg.preemph) {
        return Err(AudioError::InvalidFraming(format!(
            "pre-emphasis {} outside [0, 1)",
            cfg.preemph
        )));
    }
    let frame_len = cfg.frame_len(clip.sample_rate_hz);
    let hop_len = cfg.hop_len(clip.sample_rate_hz).max(1);
    if frame_len == 0 {
        return Err(AudioError::InvalidFraming("frame shorter than one sample".into()));
    }
    let n = clip.samples.len();
    if n < frame_len {
        return Err(AudioError::ClipTooShort {
            samples: n,
            frame_len,
        });
    }

    let x = &clip.samples;
    let emphasized: Vec<f64> = (0..n)
        .map(|i| if i == 0 { x[0] } else { x[i] - cfg.preemph * x[i - 1] })
        .collect();

    let window = cfg.window.coefficients(frame_len);
    let num_frames = frame_count(n, frame_len, hop_len);
    let mut data = Vec::with_capacity(num_frames * frame_len);
    for f in 0..num_frames {
        let start = f * hop_len;
        data.extend(
            emphasized[start..start + frame_len]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w),
        );
    }
    Ok(FrameMatrix {
        data,
        num_frames,
        frame_len,
        hop_len,
        window_kind: cfg.window,
    })
}

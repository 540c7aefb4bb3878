//! Constant-Q transform and constant-Q cepstral coefficients.
//!
//! Bin `k` is a Hann-windowed DFT at `f_k = fmin·2^(k/B)` over
//! `N_k = ceil(Q·fs/f_k)` samples, `Q = 1/(2^(1/B) − 1)`, centered on each
//! analysis hop and divided by the window sum. Samples outside the clip
//! count as zero.
//!
//! Two exact evaluation routes are used, chosen per bin by cost: a direct
//! dot product with the precomputed kernel for short windows, and for long
//! windows a prefix-sum form that writes the Hann window as three complex
//! exponentials so each frame costs O(1) after one O(L) pass.

use rustfft::num_complex::Complex64;
use std::f64::consts::PI;

use super::dct::Dct2;
use super::dynamics::stack_dynamics;
use super::{FeatureConfig, FeatureError, FeatureKind, FeatureMatrix};
use crate::audio::AudioClip;

/// Bin layout of a constant-Q analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct CqtGeometry {
    pub bins_per_octave: usize,
    pub octaves: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub q: f64,
    pub freqs: Vec<f64>,
    pub window_lengths: Vec<usize>,
}

impl CqtGeometry {
    pub fn new(
        bins_per_octave: usize,
        octaves: usize,
        fmax: f64,
        sample_rate_hz: u32,
    ) -> Result<Self, FeatureError> {
        let nyquist = sample_rate_hz as f64 / 2.0;
        if bins_per_octave == 0 || octaves == 0 || octaves > 30 {
            return Err(FeatureError::InvalidConfig(format!(
                "CQT geometry B={bins_per_octave}, octaves={octaves}"
            )));
        }
        if !(fmax > 0.0 && fmax <= nyquist) {
            return Err(FeatureError::InvalidConfig(format!(
                "CQT fmax {fmax} outside (0, {nyquist}]"
            )));
        }
        let fmin = fmax / (1u64 << octaves) as f64;
        let b = bins_per_octave as f64;
        let first: Vec<f64> = (0..bins_per_octave)
            .map(|k| fmin * 2f64.powf(k as f64 / b))
            .collect();
        // Build upper octaves by exact doubling.
        let mut freqs = first.clone();
        for o in 1..octaves {
            let scale = (1u64 << o) as f64;
            freqs.extend(first.iter().map(|f| f * scale));
        }
        let q = 1.0 / (2f64.powf(1.0 / b) - 1.0);
        let fs = sample_rate_hz as f64;
        let window_lengths = freqs.iter().map(|f| (q * fs / f).ceil() as usize).collect();
        Ok(Self {
            bins_per_octave,
            octaves,
            fmin,
            fmax,
            q,
            freqs,
            window_lengths,
        })
    }

    pub fn num_bins(&self) -> usize {
        self.freqs.len()
    }
}

/// Complex CQT coefficients, row-major `[num_frames × num_bins]`.
#[derive(Debug, Clone)]
pub struct Cqt {
    pub geometry: CqtGeometry,
    pub hop: usize,
    pub num_frames: usize,
    pub values: Vec<Complex64>,
}

impl Cqt {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        let k = self.geometry.num_bins();
        &self.values[t * k..(t + 1) * k]
    }
}

/// Frame centers are `t·hop` for every `t` with `t·hop < len`.
fn num_frames(len: usize, hop: usize) -> usize {
    (len - 1) / hop + 1
}

fn direct_bin(x: &[f64], omega: f64, n: usize, hop: usize, frames: usize, out: &mut [Complex64], stride: usize) {
    let norm = 2.0 / n as f64;
    let (kr, ki): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|i| {
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
            let (s, c) = (omega * i as f64).sin_cos();
            (norm * w * c, -norm * w * s)
        })
        .unzip();
    let len = x.len() as isize;
    let half = (n / 2) as isize;
    for t in 0..frames {
        let start = (t * hop) as isize - half;
        let lo = (-start).max(0) as usize;
        let hi = ((len - start).min(n as isize)).max(0) as usize;
        let (mut re, mut im) = (0.0, 0.0);
        if lo < hi {
            let seg = &x[(start + lo as isize) as usize..(start + hi as isize) as usize];
            for ((s, a), b) in seg.iter().zip(&kr[lo..hi]).zip(&ki[lo..hi]) {
                re += s * a;
                im += s * b;
            }
        }
        out[t * stride] = Complex64::new(re, im);
    }
}

/// Cumulative sums `P[j] = Σ_{m<j} x[m]·e^{−iθm}`.
fn rotated_prefix(x: &[f64], theta: f64, prefix: &mut Vec<Complex64>) {
    const ANCHOR: usize = 64;
    prefix.clear();
    prefix.reserve(x.len() + 1);
    let step = Complex64::from_polar(1.0, -theta);
    let mut acc = Complex64::default();
    prefix.push(acc);
    for (block, chunk) in x.chunks(ANCHOR).enumerate() {
        let m0 = block * ANCHOR;
        let (s, c) = (-theta * m0 as f64).sin_cos();
        let mut rot = Complex64::new(c, s);
        for &v in chunk {
            acc += rot * v;
            prefix.push(acc);
            rot *= step;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn prefix_bin(
    x: &[f64],
    omega: f64,
    n: usize,
    hop: usize,
    frames: usize,
    out: &mut [Complex64],
    stride: usize,
    prefix: &mut Vec<Complex64>,
) {
    let alpha = 2.0 * PI / n as f64;
    let norm = 2.0 / n as f64;
    let len = x.len() as isize;
    let half = (n / 2) as isize;
    for t in 0..frames {
        out[t * stride] = Complex64::default();
    }
    for (theta, coef) in [(omega, 0.5), (omega - alpha, -0.25), (omega + alpha, -0.25)] {
        rotated_prefix(x, theta, prefix);
        for t in 0..frames {
            let s = (t * hop) as isize - half;
            let a = s.clamp(0, len) as usize;
            let b = (s + n as isize).clamp(0, len) as usize;
            let sum = prefix[b] - prefix[a];
            let (sn, cs) = (theta * s as f64).sin_cos();
            out[t * stride] += Complex64::new(cs, sn) * sum * (coef * norm);
        }
    }
}

/// Constant-Q transform of a clip on a `hop`-sample frame grid.
pub fn cqt(
    clip: &AudioClip,
    bins_per_octave: usize,
    octaves: usize,
    fmax: f64,
    hop: usize,
) -> Result<Cqt, FeatureError> {
    let geometry = CqtGeometry::new(bins_per_octave, octaves, fmax, clip.sample_rate_hz)?;
    let len = clip.samples.len();
    if hop == 0 {
        return Err(FeatureError::InvalidConfig("CQT hop must be positive".into()));
    }
    if geometry.window_lengths[0] > len {
        return Err(FeatureError::WindowExceedsSignal {
            window: geometry.window_lengths[0],
            samples: len,
        });
    }
    let frames = num_frames(len, hop);
    let bins = geometry.num_bins();
    let mut values = vec![Complex64::default(); frames * bins];
    let mut prefix = Vec::new();
    let fs = clip.sample_rate_hz as f64;
    for k in 0..bins {
        let n = geometry.window_lengths[k];
        let omega = 2.0 * PI * geometry.freqs[k] / fs;
        let direct_cost = 4 * frames * n;
        let prefix_cost = 36 * len;
        if direct_cost <= prefix_cost {
            direct_bin(&clip.samples, omega, n, hop, frames, &mut values[k..], bins);
        } else {
            prefix_bin(&clip.samples, omega, n, hop, frames, &mut values[k..], bins, &mut prefix);
        }
    }
    Ok(Cqt {
        geometry,
        hop,
        num_frames: frames,
        values,
    })
}

/// `count` equally spaced points from `lo` to `hi` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (count - 1) as f64;
    (0..count)
        .map(|j| if j == count - 1 { hi } else { lo + step * j as f64 })
        .collect()
}

/// Piecewise-linear interpolation of `values` (sampled at increasing
/// `freqs`) at `at`; exact at the knots, clamped outside.
pub fn interp_log_spectrum(freqs: &[f64], values: &[f64], at: f64) -> f64 {
    let last = freqs.len() - 1;
    if at <= freqs[0] {
        return values[0];
    }
    if at >= freqs[last] {
        return values[last];
    }
    // first index with freqs[i] > at, so freqs[i-1] <= at < freqs[i]
    let i = freqs.partition_point(|&f| f <= at);
    let (f0, f1) = (freqs[i - 1], freqs[i]);
    let (v0, v1) = (values[i - 1], values[i]);
    v0 + (v1 - v0) * (at - f0) / (f1 - f0)
}

/// CQCC: |CQT|² → log → uniform resampling → DCT-II → dynamics.
pub fn cqcc(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    if cfg.kind != FeatureKind::Cqcc {
        return Err(FeatureError::KindMismatch {
            expected: FeatureKind::Cqcc,
            got: cfg.kind,
        });
    }
    cfg.validate()?;
    let fmax = cfg.fmax.unwrap_or(clip.sample_rate_hz as f64 / 2.0);
    let hop = cfg.frame.hop_len(clip.sample_rate_hz).max(1);
    let spec = cqt(clip, cfg.cqt_bins_per_octave, cfg.cqt_octaves, fmax, hop)?;
    let geo = &spec.geometry;
    let bins = geo.num_bins();
    let points = cfg.resample_period * cfg.cqt_octaves;
    let grid = uniform_grid(geo.freqs[0], geo.freqs[bins - 1], points);
    let dct = Dct2::new(points);
    let first = cfg.first_cep();

    let mut values = vec![0.0; spec.num_frames * cfg.num_ceps];
    let mut logp = vec![0.0; bins];
    let mut resampled = vec![0.0; points];
    for (t, row) in values.chunks_exact_mut(cfg.num_ceps).enumerate() {
        for (l, c) in logp.iter_mut().zip(spec.frame(t)) {
            *l = c.norm_sqr().max(cfg.log_floor).ln();
        }
        for (r, &f) in resampled.iter_mut().zip(&grid) {
            *r = interp_log_spectrum(&geo.freqs, &logp, f);
        }
        dct.forward_range(&resampled, first, row);
    }
    let stat = FeatureMatrix {
        values,
        num_frames: spec.num_frames,
        dim: cfg.num_ceps,
        config: cfg.clone(),
        utt_id: clip.utt_id.clone(),
    };
    Ok(stack_dynamics(&stat, cfg.dynamics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Dynamics;

    fn tone(freq: f64, secs: f64) -> AudioClip {
        let n = (secs * 16000.0) as usize;
        AudioClip::new(
            "tone",
            (0..n)
                .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / 16000.0).sin())
                .collect(),
            16000,
        )
    }

    #[test]
    fn default_geometry() {
        let g = CqtGeometry::new(96, 9, 8000.0, 16000).unwrap();
        assert_eq!(g.fmin, 15.625);
        assert_eq!(g.num_bins(), 864);
        for k in 0..g.num_bins() - 96 {
            assert_eq!(g.freqs[k + 96], 2.0 * g.freqs[k]);
        }
    }

    #[test]
    fn tone_peaks_at_expected_bin() {
        let clip = tone(440.0, 1.0);
        let (b, oct) = (24, 6);
        let spec = cqt(&clip, b, oct, 8000.0, 160).unwrap();
        let fmin = spec.geometry.fmin;
        let want = (b as f64 * (440.0 / fmin).log2()).round() as usize;
        let t = spec.num_frames / 2;
        let frame = spec.frame(t);
        let argmax = (0..frame.len())
            .max_by(|&a, &c| frame[a].norm().total_cmp(&frame[c].norm()))
            .unwrap();
        assert_eq!(argmax, want);
    }

    #[test]
    fn silence_is_zero() {
        let clip = AudioClip::new("s", vec![0.0; 8000], 16000);
        let spec = cqt(&clip, 12, 5, 8000.0, 160).unwrap();
        assert!(spec.values.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn short_clip_rejected() {
        let clip = AudioClip::new("s", vec![0.0; 1000], 16000);
        assert!(matches!(
            cqt(&clip, 96, 9, 8000.0, 160),
            Err(FeatureError::WindowExceedsSignal { .. })
        ));
    }

    #[test]
    fn routes_agree() {
        let clip = tone(700.0, 0.6);
        let x = &clip.samples;
        let (n, hop) = (2000, 160);
        let frames = num_frames(x.len(), hop);
        let omega = 2.0 * PI * 650.0 / 16000.0;
        let mut a = vec![Complex64::default(); frames];
        let mut b = vec![Complex64::default(); frames];
        direct_bin(x, omega, n, hop, frames, &mut a, 1);
        prefix_bin(x, omega, n, hop, frames, &mut b, 1, &mut Vec::new());
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).norm() < 1e-10, "{p} vs {q}");
        }
    }

    #[test]
    fn interpolation_is_exact_at_knots() {
        let freqs = [10.0, 12.5, 20.0, 31.0];
        let vals = [-3.0, 0.7, 0.1, 2.2];
        for (f, v) in freqs.iter().zip(vals) {
            assert_eq!(interp_log_spectrum(&freqs, &vals, *f), v);
        }
        assert!((interp_log_spectrum(&freqs, &vals, 16.25) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn silence_cqcc_is_constant() {
        let clip = AudioClip::new("s", vec![0.0; 8000], 16000);
        let mut cfg = FeatureConfig::new(FeatureKind::Cqcc);
        cfg.cqt_bins_per_octave = 12;
        cfg.cqt_octaves = 5;
        cfg.include_c0 = true;
        cfg.dynamics = Dynamics::Static;
        let f = cqcc(&clip, &cfg).unwrap();
        let c0 = (80f64).sqrt() * 1e-10f64.ln();
        for row in f.rows() {
            assert!((row[0] - c0).abs() < 1e-9);
            assert!(row[1..].iter().all(|v| v.abs() < 1e-9));
        }
    }
}

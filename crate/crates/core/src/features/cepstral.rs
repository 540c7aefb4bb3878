use rustfft::{num_complex::Complex64, FftPlanner};

use super::dct::Dct2;
use super::dynamics::stack_dynamics;
use super::filterbank::{build_filterbank, FilterScale, Filterbank};
use super::{FeatureConfig, FeatureError, FeatureKind, FeatureMatrix};
use crate::audio::FrameMatrix;

/// One-sided power spectrum `|FFT|² / fft_size` of each frame, zero-padded
/// to `fft_size`. Returns `[num_frames × (fft_size/2 + 1)]` row-major.
pub fn power_spectrum(frames: &FrameMatrix, fft_size: usize) -> Result<Vec<f64>, FeatureError> {
    if frames.frame_len > fft_size {
        return Err(FeatureError::InvalidConfig(format!(
            "frame length {} exceeds fft_size {fft_size}",
            frames.frame_len
        )));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    let bins = fft_size / 2 + 1;
    let mut out = Vec::with_capacity(frames.num_frames * bins);
    let mut buf = vec![Complex64::default(); fft_size];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    for frame in frames.iter() {
        buf.iter_mut().for_each(|c| *c = Complex64::default());
        for (b, &s) in buf.iter_mut().zip(frame) {
            b.re = s;
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.extend(buf[..bins].iter().map(|c| c.norm_sqr() / fft_size as f64));
    }
    Ok(out)
}

/// Filterbank energies per frame, `[num_frames × num_filters]`.
pub fn filterbank_energies(
    frames: &FrameMatrix,
    fb: &Filterbank,
    fft_size: usize,
) -> Result<Vec<f64>, FeatureError> {
    let power = power_spectrum(frames, fft_size)?;
    let mut out = vec![0.0; frames.num_frames * fb.num_filters];
    for (p, e) in power
        .chunks_exact(fb.num_bins)
        .zip(out.chunks_exact_mut(fb.num_filters))
    {
        fb.apply(p, e);
    }
    Ok(out)
}

/// Shared tail of MFCC and LFCC: energies → log → DCT-II → dynamics.
pub fn cepstra_with_filterbank(
    frames: &FrameMatrix,
    fb: &Filterbank,
    cfg: &FeatureConfig,
    utt_id: &str,
) -> Result<FeatureMatrix, FeatureError> {
    let energies = filterbank_energies(frames, fb, cfg.fft_size)?;
    let dct = Dct2::new(fb.num_filters);
    let first = cfg.first_cep();
    let mut values = vec![0.0; frames.num_frames * cfg.num_ceps];
    let mut logs = vec![0.0; fb.num_filters];
    for (e, row) in energies
        .chunks_exact(fb.num_filters)
        .zip(values.chunks_exact_mut(cfg.num_ceps))
    {
        for (l, &v) in logs.iter_mut().zip(e) {
            *l = v.max(cfg.log_floor).ln();
        }
        dct.forward_range(&logs, first, row);
    }
    let stat = FeatureMatrix {
        values,
        num_frames: frames.num_frames,
        dim: cfg.num_ceps,
        config: cfg.clone(),
        utt_id: utt_id.to_string(),
    };
    Ok(stack_dynamics(&stat, cfg.dynamics))
}

fn scaled_cepstra(
    scale: FilterScale,
    expected: FeatureKind,
    frames: &FrameMatrix,
    cfg: &FeatureConfig,
    sample_rate_hz: u32,
    utt_id: &str,
) -> Result<FeatureMatrix, FeatureError> {
    if cfg.kind != expected {
        return Err(FeatureError::KindMismatch {
            expected,
            got: cfg.kind,
        });
    }
    cfg.validate()?;
    let fmax = cfg.fmax.unwrap_or(sample_rate_hz as f64 / 2.0);
    let fb = build_filterbank(scale, cfg.num_filters, cfg.fft_size, sample_rate_hz, cfg.fmin, fmax)?;
    cepstra_with_filterbank(frames, &fb, cfg, utt_id)
}

pub fn mfcc(
    frames: &FrameMatrix,
    cfg: &FeatureConfig,
    sample_rate_hz: u32,
    utt_id: &str,
) -> Result<FeatureMatrix, FeatureError> {
    scaled_cepstra(FilterScale::Mel, FeatureKind::Mfcc, frames, cfg, sample_rate_hz, utt_id)
}

pub fn lfcc(
    frames: &FrameMatrix,
    cfg: &FeatureConfig,
    sample_rate_hz: u32,
    utt_id: &str,
) -> Result<FeatureMatrix, FeatureError> {
    scaled_cepstra(FilterScale::Linear, FeatureKind::Lfcc, frames, cfg, sample_rate_hz, utt_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{frame_and_window, AudioClip, FrameConfig};
    use crate::features::Dynamics;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn frames_of(samples: Vec<f64>) -> FrameMatrix {
        frame_and_window(&AudioClip::new("t", samples, 16000), &FrameConfig::default()).unwrap()
    }

    fn tone(freq: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / 16000.0).sin())
            .collect()
    }

    #[test]
    fn silence_gives_constant_cepstra() {
        let frames = frames_of(vec![0.0; 1600]);
        for kind in [FeatureKind::Mfcc, FeatureKind::Lfcc] {
            let mut cfg = FeatureConfig::new(kind);
            cfg.include_c0 = true;
            cfg.dynamics = Dynamics::Static;
            let f = if kind == FeatureKind::Mfcc {
                mfcc(&frames, &cfg, 16000, "s")
            } else {
                lfcc(&frames, &cfg, 16000, "s")
            }
            .unwrap();
            let c0 = 40f64.sqrt() * 1e-10f64.ln();
            for row in f.rows() {
                assert!((row[0] - c0).abs() < 1e-9);
                assert!(row[1..].iter().all(|v| v.abs() < 1e-9));
            }
        }
    }

    #[test]
    fn tone_energy_peaks_in_its_band() {
        let frames = frames_of(tone(1000.0, 4000));
        for scale in [FilterScale::Mel, FilterScale::Linear] {
            let fb = build_filterbank(scale, 40, 512, 16000, 0.0, 8000.0).unwrap();
            let e = filterbank_energies(&frames, &fb, 512).unwrap();
            let row = &e[..40];
            let argmax = (0..40).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            let (l, r) = (fb.edges_hz[argmax], fb.edges_hz[argmax + 2]);
            assert!(l < 1000.0 && 1000.0 < r, "{scale:?}: band {argmax} = [{l}, {r}]");
            // the winning triangle is the one whose center is nearest
            let nearest = (0..40)
                .min_by(|&a, &b| {
                    (fb.centers_hz[a] - 1000.0)
                        .abs()
                        .total_cmp(&(fb.centers_hz[b] - 1000.0).abs())
                })
                .unwrap();
            assert_eq!(argmax, nearest);
        }
    }

    #[test]
    fn white_noise_linear_bands_are_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise: Vec<f64> = (0..160 * 99 + 400)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        let cfg = FrameConfig {
            preemph: 0.0,
            ..Default::default()
        };
        let frames = frame_and_window(&AudioClip::new("n", noise, 16000), &cfg).unwrap();
        assert_eq!(frames.num_frames, 100);
        let fb = build_filterbank(FilterScale::Linear, 40, 512, 16000, 0.0, 8000.0).unwrap();
        let e = filterbank_energies(&frames, &fb, 512).unwrap();
        let mut mean = vec![0.0; 40];
        for row in e.chunks_exact(40) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / 100.0;
            }
        }
        // normalize by triangle area so edge filters compare fairly
        let norm: Vec<f64> = (0..40)
            .map(|m| mean[m] / fb.row(m).iter().sum::<f64>())
            .collect();
        let mu = norm.iter().sum::<f64>() / 40.0;
        let sd = (norm.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 40.0).sqrt();
        assert!(sd / mu < 0.5, "cv {}", sd / mu);
    }

    #[test]
    fn mfcc_and_lfcc_share_the_pipeline() {
        let frames = frames_of(tone(440.0, 2000));
        let fb = build_filterbank(FilterScale::Linear, 40, 512, 16000, 0.0, 8000.0).unwrap();
        let cfg = FeatureConfig::new(FeatureKind::Lfcc);
        let direct = lfcc(&frames, &cfg, 16000, "x").unwrap();
        let shared = cepstra_with_filterbank(&frames, &fb, &cfg, "x").unwrap();
        assert_eq!(direct.values, shared.values);
    }

    #[test]
    fn kind_must_match() {
        let frames = frames_of(vec![0.0; 800]);
        let cfg = FeatureConfig::new(FeatureKind::Lfcc);
        assert!(matches!(
            mfcc(&frames, &cfg, 16000, "x"),
            Err(FeatureError::KindMismatch { .. })
        ));
    }
}

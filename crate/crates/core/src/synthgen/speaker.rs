//! Source-filter pseudo-speakers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::audio::{AudioClip, CANONICAL_RATE};
use crate::protocol::{Domain, Sex};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    pub freq_hz: f64,
    pub bandwidth_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoSpeaker {
    pub speaker_id: String,
    pub sex: Sex,
    pub domain: Domain,
    pub f0_hz: f64,
    pub formants: Vec<Formant>,
    /// Relative formant offset; zero for the native domain.
    pub domain_shift: f64,
}

const MALE_FORMANTS: [(f64, f64); 5] = [
    (520.0, 80.0),
    (1480.0, 100.0),
    (2450.0, 140.0),
    (3400.0, 200.0),
    (4400.0, 260.0),
];
const FEMALE_SCALE: f64 = 1.14;
pub const NONNATIVE_SHIFT: f64 = 0.12;
const NOISE_FLOOR_DB: f64 = -30.0;

fn f0_range(sex: Sex, domain: Domain) -> (f64, f64) {
    match (sex, domain) {
        (Sex::Female, Domain::Native) => (175.0, 225.0),
        (Sex::Female, Domain::Nonnative) => (230.0, 285.0),
        (_, Domain::Native) => (95.0, 135.0),
        (_, Domain::Nonnative) => (140.0, 175.0),
    }
}

impl PseudoSpeaker {
    /// Draws a speaker for `domain` deterministically from `seed`.
    pub fn generate(speaker_id: &str, sex: Sex, domain: Domain, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = f0_range(sex, domain);
        let f0_hz = rng.random_range(lo..hi);
        let sex_scale = if sex == Sex::Female { FEMALE_SCALE } else { 1.0 };
        let tract = rng.random_range(0.96..1.04);
        let formants = MALE_FORMANTS
            .iter()
            .map(|&(f, bw)| Formant {
                freq_hz: f * sex_scale * tract * rng.random_range(0.98..1.02),
                bandwidth_hz: bw * rng.random_range(0.9..1.1),
            })
            .collect();
        Self {
            speaker_id: speaker_id.to_string(),
            sex,
            domain,
            f0_hz,
            formants,
            domain_shift: match domain {
                Domain::Native => 0.0,
                Domain::Nonnative => NONNATIVE_SHIFT,
            },
        }
    }

    /// Formant frequencies after the domain offset.
    pub fn effective_formants(&self) -> Vec<Formant> {
        self.formants
            .iter()
            .map(|f| Formant {
                freq_hz: f.freq_hz * (1.0 + self.domain_shift),
                bandwidth_hz: f.bandwidth_hz,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let nyquist = CANONICAL_RATE as f64 / 2.0;
        let bad = |m: String| Err(SynthError::InvalidSpeaker(m));
        if !(80.0..=300.0).contains(&self.f0_hz) {
            return bad(format!("f0 {} outside 80-300 Hz", self.f0_hz));
        }
        if !(3..=5).contains(&self.formants.len()) {
            return bad(format!("{} formants (need 3-5)", self.formants.len()));
        }
        for f in self.effective_formants() {
            if !(f.freq_hz > 0.0 && f.freq_hz < nyquist && f.bandwidth_hz > 0.0) {
                return bad(format!("formant {f:?} out of range"));
            }
        }
        Ok(())
    }
}

/// Two-pole resonator with unit gain at DC.
#[derive(Default)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, freq: f64, bw: f64, fs: f64) -> f64 {
        let r = (-std::f64::consts::PI * bw / fs).exp();
        let b = 2.0 * r * (2.0 * std::f64::consts::PI * freq / fs).cos();
        let c = -r * r;
        let a = 1.0 - b - c;
        let y = a * x + b * self.y1 + c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

struct Syllable {
    start: usize,
    end: usize,
    formant_scale: [f64; 5],
    f0_scale: f64,
    amp: f64,
}

fn plan_syllables(n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<Syllable> {
    let mut out = Vec::new();
    let mut t = (rng.random_range(0.03..0.08) * fs) as usize;
    while t < n {
        let len = (rng.random_range(0.12..0.28) * fs) as usize;
        let end = (t + len).min(n);
        let mut formant_scale = [1.0; 5];
        formant_scale[0] = rng.random_range(-0.12f64..0.12).exp();
        formant_scale[1] = rng.random_range(-0.08f64..0.08).exp();
        formant_scale[2] = rng.random_range(-0.03f64..0.03).exp();
        out.push(Syllable {
            start: t,
            end,
            formant_scale,
            f0_scale: rng.random_range(0.92..1.08),
            amp: rng.random_range(0.7..1.0),
        });
        t = end + (rng.random_range(0.02..0.07) * fs) as usize;
    }
    out
}

/// Syllable-structured voiced speech for `speaker`: a jittered impulse train
/// through a glottal tilt and the speaker's formant cascade, plus a noise
/// floor 30 dB below the speech level. Samples are quantized to 16 bits.
pub fn synth_bonafide(
    speaker: &PseudoSpeaker,
    duration_s: f64,
    seed: u64,
) -> Result<AudioClip, SynthError> {
    if !(0.5..=20.0).contains(&duration_s) {
        return Err(SynthError::InvalidDuration(duration_s));
    }
    speaker.validate()?;
    let fs = CANONICAL_RATE as f64;
    let n = (duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let syllables = plan_syllables(n, fs, &mut rng);
    let formants = speaker.effective_formants();

    // per-sample control targets, then one-pole smoothing (~8 ms)
    let mut f0_target = vec![0.0; n];
    let mut amp_target = vec![0.0; n];
    let mut scale_target = vec![[1.0; 5]; n];
    let mut last = &syllables[0];
    let mut si = 0;
    for i in 0..n {
        while si < syllables.len() && syllables[si].start <= i {
            last = &syllables[si];
            si += 1;
        }
        let decl = 1.0 - 0.08 * i as f64 / n as f64;
        f0_target[i] = speaker.f0_hz * last.f0_scale * decl;
        scale_target[i] = last.formant_scale;
        amp_target[i] = if i >= last.start && i < last.end { last.amp } else { 0.0 };
    }
    let smooth = (-1.0 / (0.008 * fs)).exp();

    let mut glottal = [0.0; 2];
    let mut prev_g = 0.0;
    let mut tract: Vec<Resonator> = formants.iter().map(|_| Resonator::default()).collect();
    let mut phase = 0.0;
    let mut jitter = 1.0;
    let (mut f0, mut amp, mut scale) = (f0_target[0], 0.0, scale_target[0]);
    let mut out = vec![0.0; n];
    for i in 0..n {
        f0 = smooth * f0 + (1.0 - smooth) * f0_target[i];
        amp = smooth * amp + (1.0 - smooth) * amp_target[i];
        for (s, t) in scale.iter_mut().zip(&scale_target[i]) {
            *s = smooth * *s + (1.0 - smooth) * t;
        }
        phase += f0 * jitter / fs;
        let pulse = if phase >= 1.0 {
            phase -= 1.0;
            jitter = rng.random_range(0.98..1.02);
            amp
        } else {
            0.0
        };
        // double pole near DC, then first difference for lip radiation
        let g = pulse + 1.94 * glottal[0] - 0.9409 * glottal[1];
        glottal[1] = glottal[0];
        glottal[0] = g;
        let mut v = g - prev_g;
        prev_g = g;
        for (k, (res, f)) in tract.iter_mut().zip(&formants).enumerate() {
            v = res.step(v, f.freq_hz * scale[k], f.bandwidth_hz, fs);
        }
        out[i] = v;
    }

    let voiced: Vec<f64> = out
        .iter()
        .zip(&amp_target)
        .filter(|(_, &a)| a > 0.0)
        .map(|(v, _)| *v)
        .collect();
    let speech_rms = (voiced.iter().map(|v| v * v).sum::<f64>() / voiced.len().max(1) as f64).sqrt();
    let noise_rms = speech_rms * 10f64.powf(NOISE_FLOOR_DB / 20.0);
    for v in out.iter_mut() {
        *v += noise_rms * rng.sample::<f64, _>(StandardNormal);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { 0.5 / peak } else { 1.0 };
    let samples = out.iter().map(|v| quantize(v * gain)).collect();
    Ok(AudioClip::new(
        speaker.speaker_id.clone(),
        samples,
        CANONICAL_RATE,
    ))
}

/// Rounds to the nearest 16-bit PCM level so WAV round trips are exact.
pub fn quantize(v: f64) -> f64 {
    (v * 32768.0).round().clamp(-32768.0, 32767.0) / 32768.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex64, FftPlanner};

    fn speaker() -> PseudoSpeaker {
        PseudoSpeaker::generate("spk", Sex::Male, Domain::Native, 7)
    }

    #[test]
    fn length_and_determinism() {
        let s = speaker();
        let a = synth_bonafide(&s, 1.0, 3).unwrap();
        assert_eq!(a.samples.len(), 16000);
        assert_eq!(a, synth_bonafide(&s, 1.0, 3).unwrap());
        assert_ne!(a, synth_bonafide(&s, 1.0, 4).unwrap());
        assert!(matches!(
            synth_bonafide(&s, 0.2, 3),
            Err(SynthError::InvalidDuration(_))
        ));
    }

    #[test]
    fn nonnative_formants_are_shifted() {
        let n = PseudoSpeaker::generate("a", Sex::Female, Domain::Nonnative, 1);
        n.validate().unwrap();
        for (e, f) in n.effective_formants().iter().zip(&n.formants) {
            assert!((e.freq_hz / f.freq_hz - 1.12).abs() < 1e-12);
        }
        assert!(n.f0_hz >= 230.0);
    }

    #[test]
    fn spectral_peaks_near_formants() {
        // Long-term average spectrum; the local maximum nearest each of the
        // first three formants must sit within 50 Hz of it.
        let s = speaker();
        let clip = synth_bonafide(&s, 12.0, 11).unwrap();
        let nfft = 2048;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(nfft);
        let mut psd = vec![0.0; nfft / 2 + 1];
        for chunk in clip.samples.chunks_exact(nfft / 2).collect::<Vec<_>>().windows(2) {
            let mut buf: Vec<Complex64> = chunk[0]
                .iter()
                .chain(chunk[1])
                .enumerate()
                .map(|(i, v)| {
                    let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / nfft as f64).cos();
                    Complex64::new(v * w, 0.0)
                })
                .collect();
            fft.process(&mut buf);
            for (p, c) in psd.iter_mut().zip(&buf) {
                *p += c.norm_sqr();
            }
        }
        let hz = 16000.0 / nfft as f64;
        let half = (60.0 / hz) as usize;
        let smooth: Vec<f64> = (0..psd.len())
            .map(|i| {
                let lo = i.saturating_sub(half);
                let hi = (i + half + 1).min(psd.len());
                psd[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect();
        for f in s.effective_formants().iter().take(3) {
            let c = (f.freq_hz / hz).round() as usize;
            let span = (250.0 / hz) as usize;
            let peak = (c - span..=c + span)
                .max_by(|&a, &b| smooth[a].total_cmp(&smooth[b]))
                .unwrap();
            assert!(
                (peak as f64 * hz - f.freq_hz).abs() <= 50.0,
                "formant {} peak {}",
                f.freq_hz,
                peak as f64 * hz
            );
        }
    }
}

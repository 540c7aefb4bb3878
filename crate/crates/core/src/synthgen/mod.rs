//! Deterministic synthetic corpus: source-filter pseudo-speakers in two
//! domains and vocoder-style spoofs derived from their utterances.

mod lpc;
mod speaker;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lpc::{autocorrelation, estimate_f0, levinson, lpc, lpc_resynth, LPC_ORDER};
pub use speaker::{quantize, synth_bonafide, Formant, PseudoSpeaker, NONNATIVE_SHIFT};

use crate::audio::{resample_rational, write_wav, AudioClip, AudioError};
use crate::features::fnv1a;
use crate::protocol::{
    make_splits, save_manifest, validate_protocol, Domain, Label, ManifestEntry, ProtocolError,
    Sex, Split, SplitRatios,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no voiced frame found; cannot estimate F0")]
    UnvoicedInput,
    #[error("duration {0} s outside 0.5-20 s")]
    InvalidDuration(f64),
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error("invalid speaker: {0}")]
    InvalidSpeaker(String),
    #[error("invalid corpus spec: {0}")]
    InvalidCorpus(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpoofKind {
    /// Parameter: F0 multiplier applied to the re-synthesis excitation.
    LpcResynth,
    /// Parameter: pitch shift in semitones.
    F0Shift,
    /// Parameter: speed factor (> 1 is faster).
    SpeedShift,
}

impl SpoofKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SpoofKind::LpcResynth => "lpc_resynth",
            SpoofKind::F0Shift => "f0_shift",
            SpoofKind::SpeedShift => "speed_shift",
        }
    }
}

/// Attack recipe: a transform whose parameter is drawn uniformly from
/// `[lo, hi]` per utterance. Text form: `ATTACK=kind:lo:hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpoofRecipe {
    pub attack_id: String,
    pub kind: SpoofKind,
    pub lo: f64,
    pub hi: f64,
}

impl SpoofRecipe {
    pub fn new(attack_id: &str, kind: SpoofKind, lo: f64, hi: f64) -> Result<Self, SynthError> {
        let r = Self {
            attack_id: attack_id.to_string(),
            kind,
            lo,
            hi,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidRecipe(m));
        if self.attack_id.is_empty()
            || self.attack_id == "-"
            || self.attack_id.contains(|c: char| c.is_whitespace() || c == '\t')
        {
            return bad(format!("bad attack id '{}'", self.attack_id));
        }
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return bad(format!("range [{}, {}]", self.lo, self.hi));
        }
        let (min, max) = match self.kind {
            SpoofKind::LpcResynth => (0.5, 2.0),
            SpoofKind::F0Shift => (-4.0, 4.0),
            SpoofKind::SpeedShift => (0.8, 1.25),
        };
        if self.lo < min || self.hi > max {
            return bad(format!(
                "{} parameters must lie in [{min}, {max}], got [{}, {}]",
                self.kind.as_str(),
                self.lo,
                self.hi
            ));
        }
        Ok(())
    }

    /// The six attacks used by the default corpus.
    pub fn defaults() -> Vec<SpoofRecipe> {
        [
            "A01=lpc_resynth:1:1",
            "A02=lpc_resynth:0.8:1.2",
            "A03=f0_shift:1:3",
            "A04=f0_shift:-3:-1",
            "A05=speed_shift:1.05:1.2",
            "A06=speed_shift:0.85:0.95",
        ]
        .iter()
        .map(|s| s.parse().expect("default recipe"))
        .collect()
    }
}

impl fmt::Display for SpoofRecipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}:{}:{}", self.attack_id, self.kind.as_str(), self.lo, self.hi)
    }
}

impl FromStr for SpoofRecipe {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SynthError::InvalidRecipe(format!("'{s}' (expected ATTACK=kind:lo:hi)"));
        let (id, rest) = s.split_once('=').ok_or_else(bad)?;
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let kind = match parts[0] {
            "lpc_resynth" => SpoofKind::LpcResynth,
            "f0_shift" => SpoofKind::F0Shift,
            "speed_shift" => SpoofKind::SpeedShift,
            other => {
                return Err(SynthError::InvalidRecipe(format!(
                    "unknown kind '{other}' (lpc_resynth, f0_shift, speed_shift)"
                )))
            }
        };
        let lo: f64 = parts[1].parse().map_err(|_| bad())?;
        let hi: f64 = parts[2].parse().map_err(|_| bad())?;
        SpoofRecipe::new(id, kind, lo, hi)
    }
}

/// `p/100` approximation of a positive ratio.
fn percent_ratio(r: f64) -> u64 {
    (r * 100.0).round().max(1.0) as u64
}

/// Speed change by rational resampling: output length is `len / factor`,
/// pitch and formants scale by `factor`.
pub fn speed_shift(x: &[f64], factor: f64) -> Vec<f64> {
    resample_rational(x, 100, percent_ratio(factor))
}

/// WSOLA time scaling of `x` to exactly `out_len` samples with Hann frames
/// of `frame` samples at half overlap. Each frame's read position may move
/// by up to `frame/2` samples from its nominal place to best continue the
/// previous frame, which keeps the periodicity of voiced segments intact.
pub fn time_stretch(x: &[f64], out_len: usize, frame: usize) -> Vec<f64> {
    if x.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }
    let hop = (frame / 2).max(1);
    let tolerance = (frame / 2) as isize;
    let ratio = x.len() as f64 / out_len as f64;
    let window: Vec<f64> = (0..frame)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / frame as f64).cos())
        .collect();
    let last = x.len() as isize - 1;
    let at = |i: isize| x[i.clamp(0, last) as usize];
    let mut out = vec![0.0; out_len + frame];
    let mut norm = vec![0.0; out_len + frame];
    // read position of the previous frame, None before the first
    let mut prev: Option<isize> = None;
    let mut s = 0usize;
    while s < out_len + hop {
        let nominal = (s as f64 * ratio).round() as isize - hop as isize;
        let start = match prev {
            None => nominal,
            Some(p) => {
                // natural continuation of the previous frame's second half
                let target = p + hop as isize;
                let mut best = (f64::NEG_INFINITY, nominal);
                for d in -tolerance..=tolerance {
                    let c = nominal + d;
                    let score: f64 = (0..hop as isize).map(|j| at(c + j) * at(target + j)).sum();
                    if score > best.0 {
                        best = (score, c);
                    }
                }
                best.1
            }
        };
        for (j, w) in window.iter().enumerate() {
            let o = s as isize + j as isize - hop as isize;
            if o < 0 || o as usize >= out.len() {
                continue;
            }
            out[o as usize] += w * at(start + j as isize);
            norm[o as usize] += w;
        }
        prev = Some(start);
        s += hop;
    }
    out.truncate(out_len);
    out.iter()
        .zip(&norm)
        .map(|(v, n)| if *n > 1e-9 { v / n } else { 0.0 })
        .collect()
}

/// Pitch shift by `semitones`: resample (which shifts pitch and formants
/// and changes duration), then OLA back to the original duration.
pub fn f0_shift(x: &[f64], semitones: f64, sample_rate_hz: u32) -> Vec<f64> {
    let ratio = 2f64.powf(semitones / 12.0);
    let shifted = resample_rational(x, 100, percent_ratio(ratio));
    let frame = (0.025 * sample_rate_hz as f64).round() as usize;
    time_stretch(&shifted, x.len(), frame)
}

/// Applies `recipe` with a parameter drawn from `seed`.
pub fn apply_spoof(clip: &AudioClip, recipe: &SpoofRecipe, seed: u64) -> Result<AudioClip, SynthError> {
    recipe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let param = if recipe.hi > recipe.lo {
        rng.random_range(recipe.lo..=recipe.hi)
    } else {
        recipe.lo
    };
    let samples = match recipe.kind {
        SpoofKind::LpcResynth => lpc_resynth(&clip.samples, clip.sample_rate_hz, param, &mut rng)?,
        SpoofKind::F0Shift => f0_shift(&clip.samples, param, clip.sample_rate_hz),
        SpoofKind::SpeedShift => speed_shift(&clip.samples, param),
    };
    // keep the spoof at the source's peak level, on the 16-bit grid
    let src_peak = clip.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { src_peak / peak } else { 1.0 };
    Ok(AudioClip::new(
        format!("{}_{}", clip.utt_id, recipe.attack_id),
        samples.iter().map(|v| quantize(v * gain)).collect(),
        clip.sample_rate_hz,
    ))
}

/// Seed for one named stream, independent of generation order.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    fnv1a(name.as_bytes()) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub speakers_per_domain: usize,
    pub utts_per_speaker: usize,
    pub recipes: Vec<SpoofRecipe>,
    pub seed: u64,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            speakers_per_domain: 12,
            utts_per_speaker: 20,
            recipes: SpoofRecipe::defaults(),
            seed: 42,
            min_duration_s: 1.0,
            max_duration_s: 1.5,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.recipes.is_empty() {
            return Err(SynthError::InvalidCorpus("at least one recipe is required".into()));
        }
        for r in &self.recipes {
            r.validate()?;
        }
        let mut ids: Vec<&str> = self.recipes.iter().map(|r| r.attack_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(SynthError::InvalidCorpus("duplicate attack ids".into()));
        }
        if self.speakers_per_domain < 3 || self.utts_per_speaker == 0 {
            return Err(SynthError::InvalidCorpus(
                "need at least 3 speakers per domain and 1 utterance per speaker".into(),
            ));
        }
        if !(0.5 <= self.min_duration_s
            && self.min_duration_s <= self.max_duration_s
            && self.max_duration_s <= 20.0)
        {
            return Err(SynthError::InvalidCorpus(format!(
                "durations [{}, {}] must lie within 0.5-20 s",
                self.min_duration_s, self.max_duration_s
            )));
        }
        Ok(())
    }
}

fn domain_tag(d: Domain) -> &'static str {
    match d {
        Domain::Native => "nat",
        Domain::Nonnative => "non",
    }
}

/// The speakers of `spec`, native first, sexes alternating.
pub fn corpus_speakers(spec: &CorpusSpec) -> Vec<PseudoSpeaker> {
    let mut out = Vec::new();
    for &domain in Domain::ALL {
        for s in 0..spec.speakers_per_domain {
            let id = format!("{}_s{s:02}", domain_tag(domain));
            let sex = if s % 2 == 0 { Sex::Male } else { Sex::Female };
            out.push(PseudoSpeaker::generate(&id, sex, domain, derive_seed(spec.seed, &id)));
        }
    }
    out
}

/// One bonafide utterance and its spoofs, in recipe order.
fn render_utterance(
    spec: &CorpusSpec,
    speaker: &PseudoSpeaker,
    utt: usize,
) -> Result<Vec<(ManifestEntry, AudioClip)>, SynthError> {
    let utt_id = format!("{}_u{utt:03}", speaker.speaker_id);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &utt_id));
    let duration = if spec.max_duration_s > spec.min_duration_s {
        rng.random_range(spec.min_duration_s..spec.max_duration_s)
    } else {
        spec.min_duration_s
    };
    let mut bona = synth_bonafide(speaker, duration, rng.random())?;
    bona.utt_id = utt_id.clone();
    let entry = |id: &str, label: Label, attack: &str| ManifestEntry {
        utt_id: id.to_string(),
        path: format!("wav/{id}.wav"),
        speaker_id: speaker.speaker_id.clone(),
        sex: speaker.sex,
        domain: speaker.domain,
        label,
        attack_id: attack.to_string(),
        split: Split::Train,
    };
    let mut out = vec![(entry(&utt_id, Label::Bonafide, "-"), bona.clone())];
    for r in &spec.recipes {
        let spoof = apply_spoof(&bona, r, derive_seed(spec.seed, &format!("{utt_id}_{}", r.attack_id)))?;
        out.push((entry(&spoof.utt_id, Label::Spoof, &r.attack_id), spoof));
    }
    Ok(out)
}

/// Generates the corpus under `out_dir` (`wav/*.wav` plus `manifest.tsv`)
/// and returns the manifest entries with speaker-disjoint splits.
pub fn build_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<Vec<ManifestEntry>, SynthError> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir.join("wav"))?;
    let speakers = corpus_speakers(spec);
    let jobs: Vec<(usize, usize)> = (0..speakers.len())
        .flat_map(|s| (0..spec.utts_per_speaker).map(move |u| (s, u)))
        .collect();
    let rendered: Vec<Vec<ManifestEntry>> = jobs
        .par_iter()
        .map(|&(s, u)| {
            let items = render_utterance(spec, &speakers[s], u)?;
            let mut entries = Vec::with_capacity(items.len());
            for (e, clip) in items {
                write_wav(out_dir.join(&e.path), &clip)?;
                entries.push(e);
            }
            Ok(entries)
        })
        .collect::<Result<_, SynthError>>()?;
    let mut entries: Vec<ManifestEntry> = rendered.into_iter().flatten().collect();
    make_splits(&mut entries, SplitRatios::default(), spec.seed)?;
    validate_protocol(&entries)?;
    save_manifest(out_dir.join("manifest.tsv"), &entries)?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::read_wav;

    fn source() -> AudioClip {
        let s = PseudoSpeaker::generate("t", Sex::Female, Domain::Native, 5);
        let mut c = synth_bonafide(&s, 1.2, 9).unwrap();
        c.utt_id = "t_u000".into();
        c
    }

    #[test]
    fn recipe_text_round_trip() {
        for r in SpoofRecipe::defaults() {
            assert_eq!(r.to_string().parse::<SpoofRecipe>().unwrap(), r);
        }
        assert!("A01=warp:1:2".parse::<SpoofRecipe>().is_err());
        assert!("A01=speed_shift:0.5:1".parse::<SpoofRecipe>().is_err());
        assert!("A01=f0_shift:-5:1".parse::<SpoofRecipe>().is_err());
    }

    #[test]
    fn speed_lengths() {
        let x = source();
        let same = speed_shift(&x.samples, 1.0);
        assert_eq!(same.len(), x.samples.len());
        let fast = speed_shift(&x.samples, 1.25);
        let expect = x.samples.len() as f64 * 0.8;
        assert!((fast.len() as f64 - expect).abs() <= 400.0);
    }

    #[test]
    fn f0_shift_keeps_length_and_moves_pitch() {
        let x = source();
        let up = f0_shift(&x.samples, 3.0, 16000);
        assert_eq!(up.len(), x.samples.len());
        // pitch of a steady middle segment rises by about 2^(3/12)
        let mid = x.samples.len() / 2;
        let before = estimate_f0(&x.samples[mid - 320..mid + 320], 16000);
        let after = estimate_f0(&up[mid - 320..mid + 320], 16000);
        if let (Some(b), Some(a)) = (before, after) {
            assert!((a / b / 2f64.powf(0.25) - 1.0).abs() < 0.08, "{b} -> {a}");
        }
    }

    /// Average log power spectrum in 64 bands, a crude envelope.
    fn envelope(x: &[f64]) -> Vec<f64> {
        use rustfft::{num_complex::Complex64, FftPlanner};
        let n = 512;
        let fft = FftPlanner::new().plan_fft_forward(n);
        let mut acc = vec![0.0; n / 2];
        for ch in x.chunks_exact(n) {
            let mut buf: Vec<Complex64> = ch.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft.process(&mut buf);
            for (a, c) in acc.iter_mut().zip(&buf) {
                *a += c.norm_sqr();
            }
        }
        acc.chunks(4).map(|c| (c.iter().sum::<f64>() + 1e-12).ln()).collect()
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let ma = a.iter().sum::<f64>() / a.len() as f64;
        let mb = b.iter().sum::<f64>() / b.len() as f64;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn lpc_resynth_changes_waveform_not_envelope() {
        let x = source();
        let r: SpoofRecipe = "A01=lpc_resynth:1:1".parse().unwrap();
        let y = apply_spoof(&x, &r, 1).unwrap();
        assert_eq!(y.samples.len(), x.samples.len());
        let diff: f64 = x.samples.iter().zip(&y.samples).map(|(a, b)| (a - b).powi(2)).sum();
        let norm: f64 = x.samples.iter().map(|a| a * a).sum();
        assert!((diff / norm).sqrt() > 0.1);
        assert!(correlation(&envelope(&x.samples), &envelope(&y.samples)) > 0.8);
    }

    #[test]
    fn spoofs_are_deterministic() {
        let x = source();
        for r in SpoofRecipe::defaults() {
            assert_eq!(apply_spoof(&x, &r, 3).unwrap(), apply_spoof(&x, &r, 3).unwrap());
        }
    }

    #[test]
    fn small_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            speakers_per_domain: 3,
            utts_per_speaker: 2,
            min_duration_s: 0.6,
            max_duration_s: 0.7,
            ..Default::default()
        };
        let entries = build_corpus(&spec, dir.path()).unwrap();
        assert_eq!(entries.len(), 2 * 3 * 2 * 7);
        let bona = entries.iter().filter(|e| e.label == Label::Bonafide).count();
        assert_eq!(bona * 6, entries.len() - bona);
        let st = validate_protocol(&entries).unwrap();
        assert!(st.groups.values().all(|g| g.spoof == 6 * g.bonafide));
        let first = read_wav(dir.path().join(&entries[0].path)).unwrap();
        assert_eq!(first.sample_rate_hz, 16000);

        let again = tempfile::tempdir().unwrap();
        assert_eq!(build_corpus(&spec, again.path()).unwrap(), entries);
        for e in entries.iter().step_by(5) {
            assert_eq!(
                std::fs::read(dir.path().join(&e.path)).unwrap(),
                std::fs::read(again.path().join(&e.path)).unwrap()
            );
        }
    }
}

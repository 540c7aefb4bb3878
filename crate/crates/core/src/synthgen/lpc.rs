//! Linear-prediction analysis and pulse-excited resynthesis.

use rand::Rng;
use rand_distr::StandardNormal;

use super::SynthError;

pub const LPC_ORDER: usize = 16;
const F0_MIN: f64 = 60.0;
const F0_MAX: f64 = 400.0;
const VOICING_THRESHOLD: f64 = 0.45;

/// Autocorrelation `r[0..=order]` of `x`.
pub fn autocorrelation(x: &[f64], order: usize) -> Vec<f64> {
    (0..=order)
        .map(|lag| {
            x.iter()
                .zip(x.iter().skip(lag))
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

/// Levinson-Durbin recursion. Returns `a` with `a[0] = 1` so that
/// `A(z) = Σ a_k z^-k` whitens the signal, and the final prediction error.
pub fn levinson(r: &[f64]) -> (Vec<f64>, f64) {
    let order = r.len() - 1;
    let mut a = vec![0.0; order + 1];
    a[0] = 1.0;
    let mut err = r[0];
    if err <= 0.0 {
        return (a, 0.0);
    }
    let mut prev = a.clone();
    for i in 1..=order {
        let acc: f64 = (1..i).map(|j| prev[j] * r[i - j]).sum::<f64>() + r[i];
        let k = -acc / err;
        for j in 1..i {
            a[j] = prev[j] + k * prev[i - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
        if err <= 0.0 {
            err = 0.0;
            break;
        }
        prev.copy_from_slice(&a);
    }
    (a, err)
}

/// Predictor coefficients of `frame` after Hamming weighting, with a tiny
/// white-noise correction for numerical stability.
pub fn lpc(frame: &[f64], order: usize) -> (Vec<f64>, f64) {
    let n = frame.len();
    let w: Vec<f64> = frame
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let c = if n > 1 {
                0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()
            } else {
                1.0
            };
            v * c
        })
        .collect();
    let mut r = autocorrelation(&w, order);
    r[0] *= 1.0 + 1e-9;
    levinson(&r)
}

/// Fundamental frequency of `x` by normalized autocorrelation over
/// 60–400 Hz, or `None` when no lag is periodic enough.
pub fn estimate_f0(x: &[f64], sample_rate_hz: u32) -> Option<f64> {
    let fs = sample_rate_hz as f64;
    let min_lag = (fs / F0_MAX).floor() as usize;
    let max_lag = ((fs / F0_MIN).ceil() as usize).min(x.len().saturating_sub(2));
    if max_lag <= min_lag + 1 {
        return None;
    }
    let energy: f64 = x.iter().map(|v| v * v).sum();
    if energy <= 1e-12 * x.len() as f64 {
        return None;
    }
    // cumulative energy so each lag's normalizer costs O(1)
    let mut cum = Vec::with_capacity(x.len() + 1);
    cum.push(0.0);
    for v in x {
        cum.push(cum.last().unwrap() + v * v);
    }
    let n = x.len();
    let nac: Vec<f64> = (min_lag - 1..=max_lag + 1)
        .map(|lag| {
            let (a, b) = (&x[..n - lag], &x[lag..]);
            let num: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
            let den = ((cum[n - lag] - cum[0]) * (cum[n] - cum[lag])).max(0.0).sqrt();
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        })
        .collect();
    // nac[j] is lag min_lag - 1 + j
    let best = (1..nac.len() - 1).map(|j| nac[j]).fold(f64::NEG_INFINITY, f64::max);
    if best < VOICING_THRESHOLD {
        return None;
    }
    // shortest local maximum close to the best guards against octave errors
    let j = (1..nac.len() - 1)
        .find(|&j| nac[j] >= 0.9 * best && nac[j] >= nac[j - 1] && nac[j] >= nac[j + 1])?;
    let (y0, y1, y2) = (nac[j - 1], nac[j], nac[j + 1]);
    let denom = y0 - 2.0 * y1 + y2;
    let shift = if denom.abs() > 1e-12 {
        (0.5 * (y0 - y2) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let lag = (min_lag - 1 + j) as f64 + shift;
    Some(fs / lag)
}

fn all_pole(x: &[f64], a: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for n in 0..x.len() {
        let mut acc = x[n];
        for k in 1..a.len().min(n + 1) {
            acc -= a[k] * y[n - k];
        }
        y[n] = acc;
    }
    y
}

/// Re-synthesizes `x` from per-frame LPC envelopes driven by a pulse train
/// at the estimated F0 times `f0_factor` (noise in unvoiced frames), with
/// each frame matched to the input's windowed energy.
pub fn lpc_resynth<R: Rng>(
    x: &[f64],
    sample_rate_hz: u32,
    f0_factor: f64,
    rng: &mut R,
) -> Result<Vec<f64>, SynthError> {
    let fs = sample_rate_hz as f64;
    let frame = (0.025 * fs).round() as usize;
    let hop = frame / 2;
    let pitch_win = (0.040 * fs).round() as usize;
    // pad so every output sample is covered by two half-overlapping frames
    let lead = hop;
    let padded_len = x.len() + lead + frame;
    let mut padded = vec![0.0; padded_len];
    padded[lead..lead + x.len()].copy_from_slice(x);
    let frames = (padded_len - frame) / hop + 1;

    let f0: Vec<Option<f64>> = (0..frames)
        .map(|i| {
            let center = i * hop + frame / 2;
            let lo = center.saturating_sub(pitch_win / 2);
            let hi = (lo + pitch_win).min(padded_len);
            estimate_f0(&padded[lo..hi], sample_rate_hz).map(|f| f * f0_factor)
        })
        .collect();
    if f0.iter().all(Option::is_none) {
        return Err(SynthError::UnvoicedInput);
    }

    // continuous excitation with phase carried across frames
    let mut excitation = vec![0.0; padded_len];
    let mut phase = 0.0;
    for (i, e) in excitation.iter_mut().enumerate() {
        let idx = (i / hop).min(frames - 1);
        match f0[idx] {
            Some(f) => {
                phase += f / fs;
                if phase >= 1.0 {
                    phase -= phase.floor();
                    *e = 1.0;
                }
            }
            None => *e = rng.sample::<f64, _>(StandardNormal) * 0.1,
        }
    }

    let window: Vec<f64> = (0..frame)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / frame as f64).cos())
        .collect();
    let mut out = vec![0.0; padded_len];
    for i in 0..frames {
        let s = i * hop;
        let seg = &padded[s..s + frame];
        let target: f64 = seg.iter().zip(&window).map(|(v, w)| (v * w).powi(2)).sum();
        if target <= 0.0 {
            continue;
        }
        let (a, _) = lpc(seg, LPC_ORDER);
        let y = all_pole(&excitation[s..s + frame], &a);
        let got: f64 = y.iter().zip(&window).map(|(v, w)| (v * w).powi(2)).sum();
        if got <= 0.0 || !got.is_finite() {
            continue;
        }
        let g = (target / got).sqrt();
        for ((o, v), w) in out[s..s + frame].iter_mut().zip(&y).zip(&window) {
            *o += g * v * w;
        }
    }
    Ok(out[lead..lead + x.len()].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn levinson_matches_normal_equations() {
        // AR(2) process autocorrelation, solved directly by Cramer's rule.
        let r = [2.0, 1.2, 0.5];
        let (a, err) = levinson(&r);
        let det = r[0] * r[0] - r[1] * r[1];
        let p1 = (r[1] * r[0] - r[1] * r[2]) / det;
        let p2 = (r[0] * r[2] - r[1] * r[1]) / det;
        assert!((a[1] + p1).abs() < 1e-12 && (a[2] + p2).abs() < 1e-12);
        assert!((err - (r[0] - p1 * r[1] - p2 * r[2])).abs() < 1e-12);
    }

    #[test]
    fn f0_of_pulse_train() {
        let fs = 16000;
        for f in [90.0, 150.0, 230.0, 350.0] {
            let period = fs as f64 / f;
            let x: Vec<f64> = (0..640)
                .map(|i| {
                    let ph = (i as f64 / period).fract();
                    (-ph * 8.0).exp() - 0.12
                })
                .collect();
            let est = estimate_f0(&x, fs).unwrap();
            assert!((est - f).abs() / f < 0.02, "{f} -> {est}");
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(estimate_f0(&[0.0; 640], 16000).is_none());
        assert!(matches!(
            lpc_resynth(&[0.0; 8000], 16000, 1.0, &mut rng),
            Err(SynthError::UnvoicedInput)
        ));
    }
}

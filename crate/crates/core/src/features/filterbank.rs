use serde::{Deserialize, Serialize};

use super::FeatureError;

/// HTK mel scale.
pub fn mel_scale(freq_hz: f64) -> f64 {
    2595.0 * (1.0 + freq_hz / 700.0).log10()
}

pub fn hz_to_mel(freq_hz: f64) -> f64 {
    mel_scale(freq_hz)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterScale {
    Mel,
    Linear,
}

impl FilterScale {
    fn forward(self, hz: f64) -> f64 {
        match self {
            FilterScale::Mel => mel_scale(hz),
            FilterScale::Linear => hz,
        }
    }

    fn inverse(self, v: f64) -> f64 {
        match self {
            FilterScale::Mel => mel_to_hz(v),
            FilterScale::Linear => v,
        }
    }
}

/// Triangular filters over the one-sided power spectrum, row-major
/// `[num_filters × (fft_size/2 + 1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Filterbank {
    pub weights: Vec<f64>,
    pub num_filters: usize,
    pub num_bins: usize,
    pub centers_hz: Vec<f64>,
    /// Band edges including the outer two, `num_filters + 2` points.
    pub edges_hz: Vec<f64>,
}

impl Filterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.num_bins..(m + 1) * self.num_bins]
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        debug_assert_eq!(power.len(), self.num_bins);
        for (m, o) in out.iter_mut().enumerate() {
            *o = self.row(m).iter().zip(power).map(|(w, p)| w * p).sum();
        }
    }
}

/// Builds `num_filters` triangles with centers equally spaced on `scale`
/// between `fmin` and `fmax`. Each triangle rises from the previous center
/// and falls to the next one, weights evaluated at the exact FFT bin
/// frequencies.
pub fn build_filterbank(
    scale: FilterScale,
    num_filters: usize,
    fft_size: usize,
    sample_rate_hz: u32,
    fmin: f64,
    fmax: f64,
) -> Result<Filterbank, FeatureError> {
    let nyquist = sample_rate_hz as f64 / 2.0;
    if num_filters == 0 || fft_size < 2 {
        return Err(FeatureError::InvalidConfig(
            "filterbank needs at least one filter and fft_size >= 2".into(),
        ));
    }
    if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
        return Err(FeatureError::InvalidConfig(format!(
            "band [{fmin}, {fmax}] invalid for Nyquist {nyquist}"
        )));
    }
    let lo = scale.forward(fmin);
    let hi = scale.forward(fmax);
    let step = (hi - lo) / (num_filters + 1) as f64;
    let edges_hz: Vec<f64> = (0..num_filters + 2)
        .map(|i| scale.inverse(lo + step * i as f64))
        .collect();

    let bin_hz = sample_rate_hz as f64 / fft_size as f64;
    let center_bins: Vec<i64> = edges_hz[1..=num_filters]
        .iter()
        .map(|c| (c / bin_hz).round() as i64)
        .collect();
    if let Some(w) = center_bins.windows(2).position(|w| w[0] == w[1]) {
        return Err(FeatureError::DegenerateBand(format!(
            "filters {} and {} both center on FFT bin {} (fft_size {fft_size})",
            w,
            w + 1,
            center_bins[w]
        )));
    }

    let num_bins = fft_size / 2 + 1;
    let mut weights = vec![0.0; num_filters * num_bins];
    for m in 0..num_filters {
        let (l, c, r) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
        let row = &mut weights[m * num_bins..(m + 1) * num_bins];
        for (j, w) in row.iter_mut().enumerate() {
            let f = j as f64 * bin_hz;
            *w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(FeatureError::DegenerateBand(format!(
                "filter {m} ({l:.1}-{r:.1} Hz) covers no FFT bin"
            )));
        }
    }

    Ok(Filterbank {
        weights,
        num_filters,
        num_bins,
        centers_hz: edges_hz[1..=num_filters].to_vec(),
        edges_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_values() {
        assert_eq!(mel_scale(0.0), 0.0);
        assert!((mel_scale(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        assert!((mel_scale(700.0) - 781.17).abs() < 5e-3);
        assert!((mel_scale(1000.0) - 999.99).abs() < 0.01);
        assert!((mel_to_hz(mel_scale(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn linear_centers_equally_spaced() {
        let fb = build_filterbank(FilterScale::Linear, 3, 512, 16000, 0.0, 8000.0).unwrap();
        for (c, want) in fb.centers_hz.iter().zip([2000.0, 4000.0, 6000.0]) {
            assert!((c - want).abs() < 1e-9);
        }
    }

    #[test]
    fn rows_positive_on_flat_spectrum() {
        let fb = build_filterbank(FilterScale::Mel, 40, 512, 16000, 0.0, 8000.0).unwrap();
        let ones = vec![1.0; fb.num_bins];
        let mut out = vec![0.0; 40];
        fb.apply(&ones, &mut out);
        for (m, e) in out.iter().enumerate() {
            let s: f64 = fb.row(m).iter().sum();
            assert!(*e > 0.0 && (e - s).abs() < 1e-12);
            assert!(fb.row(m).iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn mel_centers_increase() {
        let fb = build_filterbank(FilterScale::Mel, 40, 512, 16000, 0.0, 8000.0).unwrap();
        assert!(fb.centers_hz.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn neighbors_meet_at_centers() {
        let fb = build_filterbank(FilterScale::Linear, 7, 64, 16000, 0.0, 8000.0).unwrap();
        // Filter m reaches zero exactly where filter m+1 peaks.
        for m in 0..6 {
            let c_next = fb.centers_hz[m + 1];
            assert_eq!(fb.edges_hz[m + 2], c_next);
        }
    }

    #[test]
    fn tiny_fft_collapses_bands() {
        let err = build_filterbank(FilterScale::Mel, 40, 16, 16000, 0.0, 8000.0);
        assert!(matches!(err, Err(FeatureError::DegenerateBand(_))));
    }
}

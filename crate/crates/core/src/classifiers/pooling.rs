use crate::features::FeatureMatrix;

use super::ClassifierError;

/// Fixed-length utterance summary: per-coefficient means then population
/// standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledVector {
    pub values: Vec<f64>,
    pub utt_id: String,
}

impl PooledVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub fn pool_features(features: &FeatureMatrix) -> Result<PooledVector, ClassifierError> {
    let (t, d) = (features.num_frames, features.dim);
    if t == 0 || d == 0 {
        return Err(ClassifierError::EmptyFeatures);
    }
    let mut mean = vec![0.0; d];
    for row in features.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    let mut var = vec![0.0; d];
    for row in features.rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let mut values = mean;
    values.extend(var.into_iter().map(|s| (s / t as f64).sqrt()));
    Ok(PooledVector {
        values,
        utt_id: features.utt_id.clone(),
    })
}

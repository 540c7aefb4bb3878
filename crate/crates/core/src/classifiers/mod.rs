//! Back-end countermeasures: a bonafide/spoof GMM pair scored by average
//! log-likelihood ratio, and gradient-boosted trees over pooled utterance
//! statistics.

mod gbdt;
mod gmm;
mod kmeans;
mod model_io;
mod pooling;

use thiserror::Error;

pub use gbdt::{
    fit_tree, gbdt_fit, gbdt_fit_traced, gbdt_score, log_loss, logistic_gradients, sigmoid,
    BoostTrace, GbdtModel, GbdtParams, GrowPreset, Node, Tree,
};
pub use gmm::{
    gmm_fit_em, gmm_fit_em_traced, gmm_log_likelihood, gmm_score_utterance, EmTrace, GmmModel,
    GmmPairCm, GmmParams,
};
pub use kmeans::kmeans_init;
pub use model_io::{
    decode_model, encode_model, load_model, save_model, CmModel, MODEL_MAGIC, MODEL_VERSION,
};
pub use pooling::{pool_features, PooledVector};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("covariance of component {0} is not positive definite even after regularization")]
    SingularCovariance(usize),
    #[error("dimension mismatch: model expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("utterance has no feature frames")]
    EmptyFeatures,
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major set of equal-length vectors (frames or pooled utterances).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameSet {
    pub values: Vec<f64>,
    pub dim: usize,
}

impl FrameSet {
    pub fn new(dim: usize) -> Self {
        Self {
            values: Vec::new(),
            dim,
        }
    }

    pub fn from_rows<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut s = Self::new(dim);
        for r in rows {
            s.push(r);
        }
        s
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.dim, "row width");
        self.values.extend_from_slice(row);
    }

    pub fn len(&self) -> usize {
        self.values.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim.max(1))
    }

    /// Keeps at most `max_rows` rows, evenly strided from the start.
    pub fn subsample(&self, max_rows: usize) -> FrameSet {
        let n = self.len();
        if n <= max_rows || max_rows == 0 {
            return self.clone();
        }
        let mut out = FrameSet::new(self.dim);
        for j in 0..max_rows {
            out.push(self.row(j * n / max_rows));
        }
        out
    }
}

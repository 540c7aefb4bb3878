use nalgebra::{DMatrix, DVector};

use super::kmeans::kmeans_init;
use super::{ClassifierError, FrameSet};
use crate::features::FeatureMatrix;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Full-covariance Gaussian mixture.
#[derive(Debug, Clone)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `K × D` row-major.
    pub means: Vec<f64>,
    /// `K × D × D`, each block row-major.
    pub covariances: Vec<f64>,
    pub dim: usize,
    /// Inverse lower Cholesky factors, same layout as `covariances`.
    chol_inv: Vec<f64>,
    /// `ln w_k − ½(D ln 2π + ln|Σ_k|)`.
    log_norm: Vec<f64>,
}

impl PartialEq for GmmModel {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights
            && self.means == other.means
            && self.covariances == other.covariances
            && self.dim == other.dim
    }
}

impl GmmModel {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<f64>,
        covariances: Vec<f64>,
        dim: usize,
    ) -> Result<Self, ClassifierError> {
        let k = weights.len();
        if k == 0 || dim == 0 {
            return Err(ClassifierError::InvalidModel("empty mixture".into()));
        }
        if means.len() != k * dim || covariances.len() != k * dim * dim {
            return Err(ClassifierError::InvalidModel(format!(
                "parameter sizes do not match K={k}, D={dim}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 || weights.iter().any(|&w| w.is_nan() || w < 1e-12) {
            return Err(ClassifierError::InvalidModel(format!(
                "mixture weights must be >= 1e-12 and sum to 1 (sum {total})"
            )));
        }
        if means.iter().chain(&covariances).any(|v| !v.is_finite()) {
            return Err(ClassifierError::InvalidModel("non-finite parameter".into()));
        }
        let mut chol_inv = Vec::with_capacity(k * dim * dim);
        let mut log_norm = Vec::with_capacity(k);
        for j in 0..k {
            let block = &covariances[j * dim * dim..(j + 1) * dim * dim];
            let cov = DMatrix::from_row_slice(dim, dim, block);
            if (&cov - cov.transpose()).abs().max() > 1e-9 * cov.abs().max().max(1.0) {
                return Err(ClassifierError::InvalidModel(format!(
                    "covariance {j} is not symmetric"
                )));
            }
            let chol = cov
                .cholesky()
                .ok_or(ClassifierError::SingularCovariance(j))?;
            let l = chol.l();
            let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
            if !log_det.is_finite() {
                return Err(ClassifierError::SingularCovariance(j));
            }
            let inv = l
                .solve_lower_triangular(&DMatrix::identity(dim, dim))
                .ok_or(ClassifierError::SingularCovariance(j))?;
            for r in 0..dim {
                for c in 0..dim {
                    chol_inv.push(inv[(r, c)]);
                }
            }
            log_norm.push(weights[j].ln() - 0.5 * (dim as f64 * LN_2PI + log_det));
        }
        Ok(Self {
            weights,
            means,
            covariances,
            dim,
            chol_inv,
            log_norm,
        })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn covariance(&self, k: usize) -> &[f64] {
        let d2 = self.dim * self.dim;
        &self.covariances[k * d2..(k + 1) * d2]
    }

    fn component_log_density(&self, k: usize, frame: &[f64], diff: &mut [f64]) -> f64 {
        let d = self.dim;
        for ((o, x), m) in diff.iter_mut().zip(frame).zip(self.mean(k)) {
            *o = x - m;
        }
        let inv = &self.chol_inv[k * d * d..(k + 1) * d * d];
        let mut maha = 0.0;
        for r in 0..d {
            // lower triangular row
            let z: f64 = inv[r * d..r * d + r + 1]
                .iter()
                .zip(&diff[..=r])
                .map(|(a, b)| a * b)
                .sum();
            maha += z * z;
        }
        self.log_norm[k] - 0.5 * maha
    }

    fn frame_log_likelihood(&self, frame: &[f64], scratch: &mut Vec<f64>) -> f64 {
        scratch.resize(self.dim, 0.0);
        let mut comps = [0.0f64; 16];
        let k = self.num_components();
        let mut heap;
        let buf: &mut [f64] = if k <= comps.len() {
            &mut comps[..k]
        } else {
            heap = vec![0.0; k];
            &mut heap
        };
        for (j, c) in buf.iter_mut().enumerate() {
            *c = self.component_log_density(j, frame, scratch);
        }
        log_sum_exp(buf)
    }

    /// Per-frame log-likelihoods of a row-major block of frames.
    pub fn log_likelihoods<'a>(
        &self,
        frames: impl IntoIterator<Item = &'a [f64]>,
    ) -> Result<Vec<f64>, ClassifierError> {
        let mut scratch = Vec::with_capacity(self.dim);
        frames
            .into_iter()
            .map(|f| {
                if f.len() != self.dim {
                    return Err(ClassifierError::DimensionMismatch {
                        expected: self.dim,
                        got: f.len(),
                    });
                }
                Ok(self.frame_log_likelihood(f, &mut scratch))
            })
            .collect()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log Σ_k w_k N(frame; μ_k, Σ_k)`.
pub fn gmm_log_likelihood(model: &GmmModel, frame: &[f64]) -> Result<f64, ClassifierError> {
    Ok(model.log_likelihoods(std::iter::once(frame))?[0])
}

/// Bonafide/spoof GMM pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPairCm {
    pub bonafide: GmmModel,
    pub spoof: GmmModel,
    pub feature_config_hash: u64,
}

impl GmmPairCm {
    pub fn new(
        bonafide: GmmModel,
        spoof: GmmModel,
        feature_config_hash: u64,
    ) -> Result<Self, ClassifierError> {
        if bonafide.dim != spoof.dim {
            return Err(ClassifierError::DimensionMismatch {
                expected: bonafide.dim,
                got: spoof.dim,
            });
        }
        Ok(Self {
            bonafide,
            spoof,
            feature_config_hash,
        })
    }

    pub fn dim(&self) -> usize {
        self.bonafide.dim
    }
}

/// Frame-averaged log-likelihood ratio; positive favours bonafide.
pub fn gmm_score_utterance(cm: &GmmPairCm, features: &FeatureMatrix) -> Result<f64, ClassifierError> {
    if features.num_frames == 0 {
        return Err(ClassifierError::EmptyFeatures);
    }
    if features.dim != cm.dim() {
        return Err(ClassifierError::DimensionMismatch {
            expected: cm.dim(),
            got: features.dim,
        });
    }
    let bona = cm.bonafide.log_likelihoods(features.rows())?;
    let spoof = cm.spoof.log_likelihoods(features.rows())?;
    let total: f64 = bona.iter().zip(&spoof).map(|(b, s)| b - s).sum();
    Ok(total / features.num_frames as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmParams {
    pub components: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Stop when the mean per-frame log-likelihood gains less than this.
    pub tol: f64,
    /// Covariance ridge as a fraction of `trace(data covariance)/D`.
    pub ridge_scale: f64,
}

impl Default for GmmParams {
    fn default() -> Self {
        Self {
            components: 2,
            max_iter: 100,
            seed: 42,
            tol: 1e-5,
            ridge_scale: 1e-6,
        }
    }
}

/// Mean per-frame training log-likelihood after each EM iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace {
    pub mean_log_likelihood: Vec<f64>,
    pub converged: bool,
    pub ridge: f64,
}

struct Design {
    x: DMatrix<f64>,
}

impl Design {
    fn new(data: &FrameSet) -> Self {
        Self {
            x: DMatrix::from_row_slice(data.len(), data.dim, &data.values),
        }
    }

    /// Component log densities `n × K` (without log-sum-exp).
    fn log_prob(&self, model: &GmmModel) -> DMatrix<f64> {
        let (n, d) = (self.x.nrows(), self.x.ncols());
        let k = model.num_components();
        let mut out = DMatrix::zeros(n, k);
        for j in 0..k {
            let mu = DVector::from_column_slice(model.mean(j));
            let mut centered = self.x.clone();
            for mut row in centered.row_iter_mut() {
                row -= mu.transpose();
            }
            let inv = DMatrix::from_row_slice(d, d, &model.chol_inv[j * d * d..(j + 1) * d * d]);
            let z = centered * inv.transpose();
            for i in 0..n {
                out[(i, j)] = model.log_norm[j] - 0.5 * z.row(i).norm_squared();
            }
        }
        out
    }

    /// Returns responsibilities and mean log-likelihood.
    fn e_step(&self, model: &GmmModel) -> (DMatrix<f64>, f64) {
        let mut lp = self.log_prob(model);
        let n = lp.nrows();
        let mut total = 0.0;
        let mut buf = vec![0.0; lp.ncols()];
        for i in 0..n {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = lp[(i, j)];
            }
            let lse = log_sum_exp(&buf);
            total += lse;
            for j in 0..lp.ncols() {
                lp[(i, j)] = (lp[(i, j)] - lse).exp();
            }
        }
        (lp, total / n as f64)
    }

    fn m_step(&self, resp: &DMatrix<f64>, ridge: f64) -> Result<GmmModel, ClassifierError> {
        let (n, d) = (self.x.nrows(), self.x.ncols());
        let k = resp.ncols();
        let mut weights = Vec::with_capacity(k);
        let mut means = Vec::with_capacity(k * d);
        let mut covs = Vec::with_capacity(k * d * d);
        for j in 0..k {
            let r = resp.column(j);
            let nk = r.sum() + 10.0 * f64::EPSILON;
            weights.push(nk / n as f64);
            let mu = self.x.tr_mul(&r) / nk;
            let mut w = self.x.clone();
            for (i, mut row) in w.row_iter_mut().enumerate() {
                row -= mu.transpose();
                row *= r[i].sqrt();
            }
            let mut cov = w.tr_mul(&w) / nk;
            for a in 0..d {
                cov[(a, a)] += ridge;
            }
            // exact symmetry
            for a in 0..d {
                for b in 0..a {
                    let v = 0.5 * (cov[(a, b)] + cov[(b, a)]);
                    cov[(a, b)] = v;
                    cov[(b, a)] = v;
                }
            }
            means.extend(mu.iter());
            for a in 0..d {
                for b in 0..d {
                    covs.push(cov[(a, b)]);
                }
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w = (*w / total).max(1e-12));
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        GmmModel::new(weights, means, covs, d)
    }
}

/// EM for a full-covariance GMM, initialized from k-means.
pub fn gmm_fit_em(data: &FrameSet, params: &GmmParams) -> Result<GmmModel, ClassifierError> {
    gmm_fit_em_traced(data, params).map(|(m, _)| m)
}

pub fn gmm_fit_em_traced(
    data: &FrameSet,
    params: &GmmParams,
) -> Result<(GmmModel, EmTrace), ClassifierError> {
    let (n, d, k) = (data.len(), data.dim, params.components);
    if d == 0 || k == 0 {
        return Err(ClassifierError::InsufficientData("empty dimension or K".into()));
    }
    if n < 10 * k {
        return Err(ClassifierError::InsufficientData(format!(
            "{n} frames for {k} components (need {})",
            10 * k
        )));
    }
    if data.values.iter().any(|v| !v.is_finite()) {
        return Err(ClassifierError::InvalidModel("non-finite training frame".into()));
    }

    // Fixed ridge from the global covariance trace.
    let mut trace = 0.0;
    for j in 0..d {
        let mean = data.rows().map(|r| r[j]).sum::<f64>() / n as f64;
        trace += data.rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
    }
    let ridge = params.ridge_scale * trace / d as f64;

    let centroids = kmeans_init(data, k, params.seed)?;
    let design = Design::new(data);
    let mut hard = DMatrix::zeros(n, k);
    for (i, row) in data.rows().enumerate() {
        let j = centroids
            .chunks_exact(d)
            .enumerate()
            .map(|(j, c)| (j, row.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
            .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
            .0;
        hard[(i, j)] = 1.0;
    }

    let mut model = design.m_step(&hard, ridge)?;
    let (mut resp, mut ll) = design.e_step(&model);
    let mut history = vec![ll];
    let mut converged = false;
    for _ in 0..params.max_iter {
        let next = design.m_step(&resp, ridge)?;
        let (r, ll_next) = design.e_step(&next);
        history.push(ll_next);
        model = next;
        resp = r;
        let gain = ll_next - ll;
        ll = ll_next;
        if gain < params.tol {
            converged = true;
            break;
        }
    }
    Ok((
        model,
        EmTrace {
            mean_log_likelihood: history,
            converged,
            ridge,
        },
    ))
}

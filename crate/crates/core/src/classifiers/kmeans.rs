use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClassifierError, FrameSet};

const MAX_ITER: usize = 50;
const MOVE_TOL: f64 = 1e-6;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    centroids
        .chunks_exact(dim)
        .enumerate()
        .map(|(j, c)| (j, sq_dist(row, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn has_k_distinct(data: &FrameSet, k: usize) -> bool {
    let mut seen: Vec<&[f64]> = Vec::with_capacity(k);
    for row in data.rows() {
        if !seen.contains(&row) {
            seen.push(row);
            if seen.len() >= k {
                return true;
            }
        }
    }
    false
}

/// k-means++ seeding followed by Lloyd iterations. Returns `k × dim`
/// centroids row-major.
pub fn kmeans_init(data: &FrameSet, k: usize, seed: u64) -> Result<Vec<f64>, ClassifierError> {
    let (n, dim) = (data.len(), data.dim);
    if k == 0 || !has_k_distinct(data, k) {
        return Err(ClassifierError::InsufficientData(format!(
            "k-means needs {k} distinct frames"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(data.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = data.rows().map(|r| sq_dist(r, &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&d| {
                    acc += d;
                    acc > target
                })
                .unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(data.row(pick));
        for (d, r) in d2.iter_mut().zip(data.rows()) {
            *d = d.min(sq_dist(r, &centroids[start..]));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..MAX_ITER {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        let mut dists = vec![0.0; n];
        for (i, row) in data.rows().enumerate() {
            let (j, d) = nearest(row, &centroids, dim);
            assign[i] = j;
            dists[i] = d;
            counts[j] += 1;
            for (s, v) in sums[j * dim..(j + 1) * dim].iter_mut().zip(row) {
                *s += v;
            }
        }
        let mut moved: f64 = 0.0;
        for j in 0..k {
            let new: Vec<f64> = if counts[j] == 0 {
                // Re-seed an empty cluster at the point farthest from its centroid.
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .unwrap();
                dists[far] = 0.0;
                data.row(far).to_vec()
            } else {
                sums[j * dim..(j + 1) * dim]
                    .iter()
                    .map(|s| s / counts[j] as f64)
                    .collect()
            };
            moved = moved.max(sq_dist(&new, &centroids[j * dim..(j + 1) * dim]).sqrt());
            centroids[j * dim..(j + 1) * dim].copy_from_slice(&new);
        }
        if moved < MOVE_TOL {
            break;
        }
    }
    Ok(centroids)
}

use super::{Dynamics, FeatureMatrix};

const SPAN: usize = 2;

/// Regression deltas over ±2 frames with edge replication.
pub fn deltas(values: &[f64], num_frames: usize, dim: usize) -> Vec<f64> {
    let denom = 2.0 * (1..=SPAN).map(|n| (n * n) as f64).sum::<f64>();
    let last = num_frames as isize - 1;
    let at = |t: isize, j: usize| values[t.clamp(0, last) as usize * dim + j];
    let mut out = vec![0.0; num_frames * dim];
    for t in 0..num_frames as isize {
        for j in 0..dim {
            let num: f64 = (1..=SPAN as isize)
                .map(|n| n as f64 * (at(t + n, j) - at(t - n, j)))
                .sum();
            out[t as usize * dim + j] = num / denom;
        }
    }
    out
}

/// Appends Δ and ΔΔ columns, ordered `[static | Δ | ΔΔ]`.
pub fn stack_dynamics(stat: &FeatureMatrix, dynamics: Dynamics) -> FeatureMatrix {
    let (t, d) = (stat.num_frames, stat.dim);
    let mut blocks = vec![stat.values.clone()];
    if dynamics != Dynamics::Static {
        let d1 = deltas(&stat.values, t, d);
        if dynamics == Dynamics::DeltaDelta {
            let d2 = deltas(&d1, t, d);
            blocks.push(d1);
            blocks.push(d2);
        } else {
            blocks.push(d1);
        }
    }
    let dim = d * blocks.len();
    let mut values = Vec::with_capacity(t * dim);
    for frame in 0..t {
        for b in &blocks {
            values.extend_from_slice(&b[frame * d..(frame + 1) * d]);
        }
    }
    let mut config = stat.config.clone();
    config.dynamics = dynamics;
    FeatureMatrix {
        values,
        num_frames: t,
        dim,
        config,
        utt_id: stat.utt_id.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureConfig;

    fn matrix(values: Vec<f64>, t: usize, d: usize) -> FeatureMatrix {
        FeatureMatrix {
            values,
            num_frames: t,
            dim: d,
            config: FeatureConfig::default(),
            utt_id: "m".into(),
        }
    }

    #[test]
    fn constant_sequence_has_zero_deltas() {
        let m = matrix(vec![3.5; 7 * 4], 7, 4);
        let s = stack_dynamics(&m, Dynamics::DeltaDelta);
        assert_eq!(s.dim, 12);
        for row in s.rows() {
            assert!(row[4..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn linear_ramp_has_unit_slope_inside() {
        let m = matrix((0..10).map(|t| t as f64).collect(), 10, 1);
        let d = deltas(&m.values, 10, 1);
        for v in &d[2..8] {
            assert!((v - 1.0).abs() < 1e-15);
        }
        // replicated edges flatten the slope at the boundary
        assert!(d[0] < 1.0 && d[9] < 1.0);
    }

    #[test]
    fn twenty_ceps_stack_to_sixty() {
        let m = matrix(vec![0.1; 5 * 20], 5, 20);
        assert_eq!(stack_dynamics(&m, Dynamics::DeltaDelta).dim, 60);
        assert_eq!(stack_dynamics(&m, Dynamics::Delta).dim, 40);
        assert_eq!(stack_dynamics(&m, Dynamics::Static).values, m.values);
    }

    #[test]
    fn single_frame_is_fine() {
        let m = matrix(vec![1.0, 2.0], 1, 2);
        let s = stack_dynamics(&m, Dynamics::DeltaDelta);
        assert_eq!(s.values, vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
    }
}

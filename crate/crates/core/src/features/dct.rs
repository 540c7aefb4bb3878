/// Orthonormal DCT-II of a fixed length with a precomputed basis.
#[derive(Debug, Clone)]
pub struct Dct2 {
    n: usize,
    basis: Vec<f64>,
}

impl Dct2 {
    pub fn new(n: usize) -> Self {
        assert!(n > 0);
        let nf = n as f64;
        let mut basis = Vec::with_capacity(n * n);
        for k in 0..n {
            let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            for i in 0..n {
                let arg = std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2.0 * nf);
                basis.push(scale * arg.cos());
            }
        }
        Self { n, basis }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn coefficient(&self, input: &[f64], k: usize) -> f64 {
        let row = &self.basis[k * self.n..(k + 1) * self.n];
        row.iter().zip(input).map(|(b, x)| b * x).sum()
    }

    /// Coefficients `first..first+count` of the transform of `input`.
    pub fn forward_range(&self, input: &[f64], first: usize, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.coefficient(input, first + j);
        }
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.forward_range(input, 0, &mut out);
        out
    }

    /// Transpose (= inverse for an orthonormal basis).
    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (k, c) in coeffs.iter().enumerate() {
            let row = &self.basis[k * self.n..(k + 1) * self.n];
            for (o, b) in out.iter_mut().zip(row) {
                *o += c * b;
            }
        }
        out
    }
}

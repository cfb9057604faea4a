//! Gauss–Hermite rules for the standard normal weight (Golub–Welsch).

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights for `E[f(Z)]`, `Z ~ N(0,1)`; weights sum to one.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "at least one node");
        // Jacobi matrix of the monic probabilists' Hermite recurrence.
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let b = (k as f64).sqrt();
            jac[(k - 1, k)] = b;
            jac[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(jac);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        }
    }

    /// Tensor-product rule in `dim` dimensions: returns (points row-major, weights).
    pub fn tensor(&self, dim: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = self.nodes.len();
        let total = n.pow(dim as u32);
        let mut points = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for code in 0..total {
            let mut c = code;
            let mut p = Vec::with_capacity(dim);
            let mut w = 1.0;
            for _ in 0..dim {
                let k = c % n;
                c /= n;
                p.push(self.nodes[k]);
                w *= self.weights[k];
            }
            points.push(p);
            weights.push(w);
        }
        (points, weights)
    }
}

/// Gauss–Legendre rule on `[lo, hi]` (Golub–Welsch).
pub fn gauss_legendre(n: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let b = kf / (4.0 * kf * kf - 1.0).sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    (
        pairs.iter().map(|p| mid + half * p.0).collect(),
        pairs.iter().map(|p| half * p.1).collect(),
    )
}

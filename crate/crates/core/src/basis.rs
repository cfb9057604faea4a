//! Orthonormal probabilists' Hermite polynomials and total-degree tensor bases.
//!
//! The univariate family is `ψₙ(x) = Heₙ(x) / √(n!)`, orthonormal under the
//! standard normal weight. Multivariate terms are tensor products `Ψ_α(z) =
//! ∏ ψ_{αᵢ}(zᵢ)` over a total-degree index set `{α : |α| ≤ p}` kept in graded
//! lexicographic order, so the constant term is always index 0.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};

/// Default guard on the number of basis terms.
pub const DEFAULT_BASIS_CAP: usize = 10_000;

/// Evaluates `Heₙ(x)/√(n!)` by the normalized three-term recurrence.
pub fn hermite_orthonormal(n: usize, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = x;
    for k in 1..n {
        let kf = k as f64;
        let next = (x * cur - kf.sqrt() * prev) / (kf + 1.0).sqrt();
        prev = cur;
        cur = next;
    }
    cur
}

/// Fills `out[k] = ψₖ(x)` for `k = 0..out.len()`.
pub fn hermite_table(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for k in 1..out.len().saturating_sub(1) {
        let kf = k as f64;
        out[k + 1] = (x * out[k] - kf.sqrt() * out[k - 1]) / (kf + 1.0).sqrt();
    }
}

/// A multi-index `α ∈ ℕ^M`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn total_degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }
}

/// Binomial coefficient `C(n, k)`, saturating at `usize::MAX`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    acc as usize
}

/// All multi-indices of total degree at most `p`, graded-lex ordered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    dim: usize,
    max_degree: usize,
    indices: Vec<MultiIndex>,
}

/// Builds the total-degree set with the default size cap.
pub fn build_index_set(dim: usize, degree: usize) -> Result<MultiIndexSet> {
    MultiIndexSet::total_degree(dim, degree, DEFAULT_BASIS_CAP)
}

impl MultiIndexSet {
    pub fn total_degree(dim: usize, degree: usize, cap: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("basis dimension must be ≥ 1".into()));
        }
        let size = binomial(dim + degree, degree);
        if size > cap {
            return Err(Error::BasisTooLarge { size, cap });
        }
        let mut indices = Vec::with_capacity(size);
        let mut buf = vec![0u32; dim];
        for d in 0..=degree {
            push_degree(&mut buf, 0, d as u32, &mut indices);
        }
        debug_assert_eq!(indices.len(), size);
        Ok(Self {
            dim,
            max_degree: degree,
            indices,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MultiIndex> {
        self.indices.iter()
    }

    /// Position of `alpha` in the ordering, if present.
    pub fn position(&self, alpha: &[u32]) -> Option<usize> {
        self.indices.iter().position(|a| a.0 == alpha)
    }

    /// Evaluates every `Ψ_α(z)` into `out` (length `len()`).
    fn eval_into(&self, z: ArrayView1<'_, f64>, table: &mut [f64], out: &mut [f64]) {
        let stride = self.max_degree + 1;
        for (i, &zi) in z.iter().enumerate() {
            hermite_table(zi, &mut table[i * stride..(i + 1) * stride]);
        }
        for (slot, alpha) in out.iter_mut().zip(&self.indices) {
            let mut v = 1.0;
            for (i, &a) in alpha.0.iter().enumerate() {
                if a > 0 {
                    v *= table[i * stride + a as usize];
                }
            }
            *slot = v;
        }
    }
}

// Fills positions `pos..` of `buf` with every composition of `remaining`,
// leading entries largest first.
fn push_degree(buf: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<MultiIndex>) {
    if pos + 1 == buf.len() {
        buf[pos] = remaining;
        out.push(MultiIndex(buf.to_vec()));
        return;
    }
    for a in (0..=remaining).rev() {
        buf[pos] = a;
        push_degree(buf, pos + 1, remaining - a, out);
    }
    buf[pos] = 0;
}

/// Evaluates the full basis vector at one latent point.
pub fn eval_basis(set: &MultiIndexSet, z: &[f64]) -> Result<Vec<f64>> {
    ensure_dim(set.dim(), z.len())?;
    let mut table = vec![0.0; set.dim() * (set.max_degree() + 1)];
    let mut out = vec![0.0; set.len()];
    set.eval_into(ArrayView1::from(z), &mut table, &mut out);
    Ok(out)
}

/// Dense `N_s × P` matrix of basis evaluations, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    index_set: MultiIndexSet,
    values: Array2<f64>,
}

impl DesignMatrix {
    pub fn index_set(&self) -> &MultiIndexSet {
        &self.index_set
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}

/// Row-wise basis evaluation for a sample matrix (one sample per row).
pub fn assemble_design(set: &MultiIndexSet, samples: ArrayView2<'_, f64>) -> Result<DesignMatrix> {
    ensure_dim(set.dim(), samples.ncols())?;
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design samples".into()));
    }
    let mut values = Array2::<f64>::zeros((samples.nrows(), set.len()));
    let table_len = set.dim() * (set.max_degree() + 1);
    values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(samples.axis_iter(Axis(0)).into_par_iter())
        .for_each_init(
            || vec![0.0; table_len],
            |table, (mut row, z)| {
                let out = row.as_slice_mut().expect("standard layout row");
                set.eval_into(z, table, out);
            },
        );
    Ok(DesignMatrix {
        index_set: set.clone(),
        values,
    })
}

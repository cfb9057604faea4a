//! The invertible-map contract shared by the copula and flow mappers.
//!
//! `forward` is the generative direction `T: z ↦ ξ` (latent to physical) and
//! `inverse` is `S = T⁻¹` (physical to latent).

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{ensure_dim, Error, Result};

pub trait TransportMap: Send + Sync {
    fn dim(&self) -> usize;

    fn forward(&self, z: &[f64]) -> Result<Vec<f64>>;

    fn inverse(&self, xi: &[f64]) -> Result<Vec<f64>>;

    /// Analytic `∂T/∂z` (row i = output i), when the map can supply one.
    fn jacobian(&self, _z: &[f64]) -> Option<Result<Array2<f64>>> {
        None
    }

    fn forward_batch(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        map_rows(z, self.dim(), |r| self.forward(r))
    }

    fn inverse_batch(&self, xi: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        map_rows(xi, self.dim(), |r| self.inverse(r))
    }
}

pub(crate) fn map_rows<F>(x: ArrayView2<'_, f64>, dim: usize, f: F) -> Result<Array2<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    ensure_dim(dim, x.ncols())?;
    let rows: Vec<Vec<f64>> = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let r = x.row(i).to_vec();
            f(&r)
        })
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((x.nrows(), dim));
    for (i, r) in rows.into_iter().enumerate() {
        ensure_dim(dim, r.len())?;
        out.row_mut(i).assign(&ndarray::ArrayView1::from(r.as_slice()));
    }
    Ok(out)
}

/// Central finite-difference Jacobian of `T` at `z`.
pub fn fd_jacobian(map: &dyn TransportMap, z: &[f64], step: f64) -> Result<Array2<f64>> {
    let m = map.dim();
    ensure_dim(m, z.len())?;
    let mut jac = Array2::zeros((m, m));
    let mut zp = z.to_vec();
    for j in 0..m {
        zp[j] = z[j] + step;
        let up = map.forward(&zp)?;
        zp[j] = z[j] - step;
        let dn = map.forward(&zp)?;
        zp[j] = z[j];
        for i in 0..m {
            jac[[i, j]] = (up[i] - dn[i]) / (2.0 * step);
        }
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(Error::MapIrregular { z: z.to_vec() });
    }
    Ok(jac)
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityMap {
    pub dim: usize,
}

impl TransportMap for IdentityMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.dim, z.len())?;
        Ok(z.to_vec())
    }

    fn inverse(&self, xi: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.dim, xi.len())?;
        Ok(xi.to_vec())
    }

    fn jacobian(&self, z: &[f64]) -> Option<Result<Array2<f64>>> {
        Some(ensure_dim(self.dim, z.len()).map(|_| Array2::eye(self.dim)))
    }
}

/// `T(z) = c·z`.
#[derive(Debug, Clone, Copy)]
pub struct ScaleMap {
    pub dim: usize,
    pub factor: f64,
}

impl TransportMap for ScaleMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.dim, z.len())?;
        Ok(z.iter().map(|v| v * self.factor).collect())
    }

    fn inverse(&self, xi: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.dim, xi.len())?;
        Ok(xi.iter().map(|v| v / self.factor).collect())
    }

    fn jacobian(&self, z: &[f64]) -> Option<Result<Array2<f64>>> {
        Some(ensure_dim(self.dim, z.len()).map(|_| Array2::eye(self.dim) * self.factor))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_map_round_trip_and_fd_jacobian() {
        let m = ScaleMap { dim: 3, factor: 2.0 };
        let z = [0.1, -0.4, 2.0];
        let xi = m.forward(&z).unwrap();
        assert_eq!(xi, vec![0.2, -0.8, 4.0]);
        assert_eq!(m.inverse(&xi).unwrap(), z.to_vec());
        let j = fd_jacobian(&m, &z, 1e-5).unwrap();
        for i in 0..3 {
            for k in 0..3 {
                let want = if i == k { 2.0 } else { 0.0 };
                assert!((j[[i, k]] - want).abs() < 1e-9);
            }
        }
        assert!(m.forward(&[1.0]).is_err());
    }

    #[test]
    fn batch_matches_rowwise() {
        let m = ScaleMap { dim: 2, factor: -3.0 };
        let x = ndarray::array![[1.0, 2.0], [3.0, 4.0]];
        let y = m.forward_batch(x.view()).unwrap();
        assert_eq!(y, ndarray::array![[-3.0, -6.0], [-9.0, -12.0]]);
        let id = IdentityMap { dim: 2 };
        assert_eq!(id.inverse_batch(x.view()).unwrap(), x);
    }
}

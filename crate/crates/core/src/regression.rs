//! Regularized least-squares estimation of PCE coefficients and their
//! closed-form post-processing (moments, Sobol' indices).
//!
//! Objective for all penalties, with `N` samples and design `Ψ`:
//!
//! ```text
//! (1/N) ‖y − Ψh‖² + λ R(h_{α≠0})
//! ```
//!
//! The constant term is never penalized, so `h₀` remains an unbiased mean
//! estimate. Ridge uses `R = ‖·‖²` on the raw orthonormal columns; LASSO uses
//! `R = ‖·‖₁` after standardizing the non-constant columns and is solved by
//! cyclic coordinate descent with `(1/2N)` scaling on the data term.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::basis::{build_index_set, eval_basis, DesignMatrix, MultiIndexSet};
use crate::error::{ensure_dim, Error, Result};
use crate::hexfloat;

pub const DEFAULT_LASSO_LAMBDA: f64 = 1e-3;
pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-6;
const LASSO_TOL: f64 = 1e-8;
const LASSO_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    None,
    Ridge,
    Lasso,
}

impl Penalty {
    pub fn default_lambda(self) -> f64 {
        match self {
            Penalty::None => 0.0,
            Penalty::Ridge => DEFAULT_RIDGE_LAMBDA,
            Penalty::Lasso => DEFAULT_LASSO_LAMBDA,
        }
    }
}

impl std::str::FromStr for Penalty {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "ols" => Ok(Penalty::None),
            "ridge" => Ok(Penalty::Ridge),
            "lasso" => Ok(Penalty::Lasso),
            other => Err(Error::Config(format!("unknown penalty `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub residual_rms: f64,
    /// √(λ_max/λ_min) of ΨᵀΨ, i.e. the 2-norm condition number of Ψ.
    pub condition_estimate: f64,
    pub nonzero: usize,
    /// Coordinate-descent sweeps (LASSO only).
    pub sweeps: Option<usize>,
    /// Fewer than 2P rows were supplied.
    pub undersampled: bool,
}

/// Scalar PCE surrogate `z ↦ hᵀΨ(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PceSurrogate {
    index_set: MultiIndexSet,
    coefficients: Vec<f64>,
    penalty: Penalty,
    lambda: f64,
    diagnostics: Option<FitDiagnostics>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSummary {
    pub mean: f64,
    pub variance: f64,
}

impl MomentSummary {
    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolReport {
    pub first_order: Vec<f64>,
    pub total: Vec<f64>,
    /// Variance share of terms involving two or more inputs.
    pub interaction: f64,
}

impl PceSurrogate {
    pub fn from_coefficients(index_set: MultiIndexSet, coefficients: Vec<f64>) -> Result<Self> {
        ensure_dim(index_set.len(), coefficients.len())?;
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("surrogate coefficients".into()));
        }
        Ok(Self {
            index_set,
            coefficients,
            penalty: Penalty::None,
            lambda: 0.0,
            diagnostics: None,
        })
    }

    pub fn index_set(&self) -> &MultiIndexSet {
        &self.index_set
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn penalty(&self) -> Penalty {
        self.penalty
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn diagnostics(&self) -> Option<&FitDiagnostics> {
        self.diagnostics.as_ref()
    }

    pub fn predict(&self, z: &[f64]) -> Result<f64> {
        let psi = eval_basis(&self.index_set, z)?;
        Ok(dot(&psi, &self.coefficients))
    }

    pub fn moments(&self) -> MomentSummary {
        moments_of(&self.coefficients)
    }

    pub fn sobol(&self) -> Result<SobolReport> {
        sobol_of(&self.index_set, &self.coefficients)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean `h₀` and variance `Σ_{α≠0} h_α²`.
pub fn moments_of(h: &[f64]) -> MomentSummary {
    MomentSummary {
        mean: h.first().copied().unwrap_or(0.0),
        variance: h.iter().skip(1).map(|v| v * v).sum(),
    }
}

pub fn sobol_of(set: &MultiIndexSet, h: &[f64]) -> Result<SobolReport> {
    ensure_dim(set.len(), h.len())?;
    let variance = moments_of(h).variance;
    if variance <= 0.0 {
        return Err(Error::Degenerate(
            "Sobol' indices need a positive output variance".into(),
        ));
    }
    let m = set.dim();
    let mut first = vec![0.0; m];
    let mut total = vec![0.0; m];
    let mut interaction = 0.0;
    for (alpha, c) in set.iter().zip(h) {
        let active: Vec<usize> = (0..m).filter(|&i| alpha.0[i] > 0).collect();
        let share = c * c / variance;
        match active.len() {
            0 => {}
            1 => first[active[0]] += share,
            _ => interaction += share,
        }
        for i in active {
            total[i] += share;
        }
    }
    Ok(SobolReport {
        first_order: first,
        total,
        interaction,
    })
}

/// Fits one coefficient vector.
pub fn fit(design: &DesignMatrix, y: &[f64], penalty: Penalty, lambda: f64) -> Result<PceSurrogate> {
    let ys = Array2::from_shape_vec((y.len(), 1), y.to_vec())
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let (coefs, mut diags) = fit_columns(design, ys.view(), penalty, lambda)?;
    Ok(PceSurrogate {
        index_set: design.index_set().clone(),
        coefficients: coefs.column(0).to_vec(),
        penalty,
        lambda,
        diagnostics: diags.pop(),
    })
}

/// Fits every column of `ys` against one shared design; returns `P × T`.
pub fn fit_columns(
    design: &DesignMatrix,
    ys: ArrayView2<'_, f64>,
    penalty: Penalty,
    lambda: f64,
) -> Result<(Array2<f64>, Vec<FitDiagnostics>)> {
    let psi = design.values();
    ensure_dim(psi.nrows(), ys.nrows())?;
    if ys.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN in regression targets".into()));
    }
    if ys.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression targets".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda must be ≥ 0, got {lambda}")));
    }
    let n = psi.nrows();
    let p = psi.ncols();
    if n == 0 {
        return Err(Error::InvalidInput("empty design".into()));
    }
    let undersampled = n < 2 * p;
    if undersampled {
        log::warn!("regression uses {n} samples for {p} terms (fewer than 2P)");
    }

    let gram = psi.t().dot(psi);
    let condition = condition_from_gram(&gram);

    let coefs = match penalty {
        Penalty::None => solve_ols(psi, ys)?,
        Penalty::Ridge => solve_ridge(&gram, psi, ys, lambda)?,
        Penalty::Lasso => Array2::zeros((p, ys.ncols())),
    };
    let mut coefs = coefs;
    let mut sweeps = vec![None; ys.ncols()];
    if penalty == Penalty::Lasso {
        let solver = LassoSolver::new(psi, lambda);
        let mut warm: Option<Array1<f64>> = None;
        for (t, col) in ys.axis_iter(Axis(1)).enumerate() {
            let (h, s) = solver.solve(col, warm.as_ref());
            coefs.column_mut(t).assign(&h.coefficients);
            warm = Some(h.standardized);
            sweeps[t] = Some(s);
        }
    }

    let fitted = psi.dot(&coefs);
    let diags = (0..ys.ncols())
        .map(|t| {
            let col = coefs.column(t);
            let rss: f64 = ys
                .column(t)
                .iter()
                .zip(fitted.column(t).iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            FitDiagnostics {
                residual_rms: (rss / n as f64).sqrt(),
                condition_estimate: condition,
                nonzero: col.iter().filter(|c| **c != 0.0).count(),
                sweeps: sweeps[t],
                undersampled,
            }
        })
        .collect();
    if coefs.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("fitted coefficients".into()));
    }
    Ok((coefs, diags))
}

fn to_dmatrix(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn condition_from_gram(gram: &Array2<f64>) -> f64 {
    let eig = SymmetricEigen::new(to_dmatrix(gram.view()));
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        (max / min).sqrt()
    }
}

fn solve_ols(psi: &Array2<f64>, ys: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let a = to_dmatrix(psi.view());
    let b = to_dmatrix(ys);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * (psi.nrows().max(psi.ncols()) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < psi.ncols() {
        return Err(Error::RankDeficient {
            rank,
            cols: psi.ncols(),
        });
    }
    let x = svd
        .solve(&b, tol)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    Ok(Array2::from_shape_fn((x.nrows(), x.ncols()), |(i, j)| x[(i, j)]))
}

fn solve_ridge(
    gram: &Array2<f64>,
    psi: &Array2<f64>,
    ys: ArrayView2<'_, f64>,
    lambda: f64,
) -> Result<Array2<f64>> {
    let n = psi.nrows() as f64;
    let p = psi.ncols();
    let mut lhs = to_dmatrix((gram / n).view());
    for j in 1..p {
        lhs[(j, j)] += lambda;
    }
    let rhs = to_dmatrix((psi.t().dot(&ys) / n).view());
    let x = match lhs.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            // Unpenalized intercept plus λ = 0 can leave the system singular.
            let lu = lhs.lu();
            lu.solve(&rhs).ok_or(Error::RankDeficient { rank: 0, cols: p })?
        }
    };
    Ok(Array2::from_shape_fn((x.nrows(), x.ncols()), |(i, j)| x[(i, j)]))
}

struct LassoSolution {
    coefficients: Array1<f64>,
    standardized: Array1<f64>,
}

/// Coordinate descent in covariance form on standardized non-constant columns.
struct LassoSolver {
    lambda: f64,
    means: Vec<f64>,
    scales: Vec<f64>,
    // standardized Gram, (P−1)²
    gram: Array2<f64>,
    // standardized design columns, N × (P−1)
    x: Array2<f64>,
}

impl LassoSolver {
    fn new(psi: &Array2<f64>, lambda: f64) -> Self {
        let n = psi.nrows() as f64;
        let q = psi.ncols() - 1;
        let mut x = psi.slice(ndarray::s![.., 1..]).to_owned();
        let mut means = vec![0.0; q];
        let mut scales = vec![0.0; q];
        for (j, mut col) in x.axis_iter_mut(Axis(1)).enumerate() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            means[j] = m;
            scales[j] = var.sqrt();
            if scales[j] > 0.0 {
                col.mapv_inplace(|v| (v - m) / scales[j]);
            } else {
                col.fill(0.0);
            }
        }
        let gram = x.t().dot(&x) / n;
        Self {
            lambda,
            means,
            scales,
            gram,
            x,
        }
    }

    fn solve(&self, y: ArrayView1<'_, f64>, warm: Option<&Array1<f64>>) -> (LassoSolution, usize) {
        let n = y.len() as f64;
        let q = self.scales.len();
        let ybar = y.sum() / n;
        let yc = y.mapv(|v| v - ybar);
        let corr = self.x.t().dot(&yc) / n;
        let mut beta = warm.cloned().unwrap_or_else(|| Array1::zeros(q));
        // g = Xᵀr/N with r = yc − Xβ
        let mut g = &corr - &self.gram.dot(&beta);
        let mut sweeps = 0;
        while sweeps < LASSO_MAX_SWEEPS {
            sweeps += 1;
            let mut max_change: f64 = 0.0;
            for j in 0..q {
                let cjj = self.gram[[j, j]];
                if cjj <= 0.0 {
                    beta[j] = 0.0;
                    continue;
                }
                let old = beta[j];
                let rho = g[j] + cjj * old;
                let new = soft_threshold(rho, self.lambda) / cjj;
                let delta = new - old;
                if delta != 0.0 {
                    beta[j] = new;
                    g.scaled_add(-delta, &self.gram.column(j));
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change < LASSO_TOL {
                break;
            }
        }
        let mut h = Array1::zeros(q + 1);
        let mut intercept = ybar;
        for j in 0..q {
            if self.scales[j] > 0.0 && beta[j] != 0.0 {
                h[j + 1] = beta[j] / self.scales[j];
                intercept -= h[j + 1] * self.means[j];
            }
        }
        h[0] = intercept;
        (
            LassoSolution {
                coefficients: h,
                standardized: beta,
            },
            sweeps,
        )
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// One coefficient vector per output time step over a shared basis.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySurrogate {
    index_set: MultiIndexSet,
    /// `T × P`, one row per time step.
    coefficients: Array2<f64>,
    penalty: Penalty,
    lambda: f64,
    diagnostics: Vec<FitDiagnostics>,
}

impl TrajectorySurrogate {
    /// `ys` holds one sample per row and one time step per column.
    pub fn fit(design: &DesignMatrix, ys: ArrayView2<'_, f64>, penalty: Penalty, lambda: f64) -> Result<Self> {
        let (coefs, diagnostics) = fit_columns(design, ys, penalty, lambda)?;
        Ok(Self {
            index_set: design.index_set().clone(),
            coefficients: coefs.reversed_axes().as_standard_layout().to_owned(),
            penalty,
            lambda,
            diagnostics,
        })
    }

    pub fn index_set(&self) -> &MultiIndexSet {
        &self.index_set
    }

    pub fn steps(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn coefficients(&self) -> &Array2<f64> {
        &self.coefficients
    }

    pub fn diagnostics(&self) -> &[FitDiagnostics] {
        &self.diagnostics
    }

    pub fn penalty(&self) -> Penalty {
        self.penalty
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn step(&self, t: usize) -> PceSurrogate {
        PceSurrogate {
            index_set: self.index_set.clone(),
            coefficients: self.coefficients.row(t).to_vec(),
            penalty: self.penalty,
            lambda: self.lambda,
            diagnostics: self.diagnostics.get(t).cloned(),
        }
    }

    /// Closed-form mean and standard deviation per step.
    pub fn mean_std(&self) -> (Vec<f64>, Vec<f64>) {
        self.coefficients
            .rows()
            .into_iter()
            .map(|r| {
                let m = moments_of(r.as_slice().expect("row-major"));
                (m.mean, m.std())
            })
            .unzip()
    }

    /// Evaluates the whole trajectory at each latent row: returns `n × T`.
    pub fn predict_batch(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let design = crate::basis::assemble_design(&self.index_set, z)?;
        Ok(design.values().dot(&self.coefficients.t()))
    }

    /// Largest coefficient support across steps (the s₀ of the error budget).
    pub fn max_nonzero(&self) -> usize {
        self.coefficients
            .rows()
            .into_iter()
            .map(|r| r.iter().filter(|c| **c != 0.0).count())
            .max()
            .unwrap_or(0)
    }
}

#[derive(Serialize, Deserialize)]
struct SurrogateDoc {
    format_version: u32,
    dimension: usize,
    max_degree: usize,
    penalty: Penalty,
    #[serde(with = "hexfloat::scalar")]
    lambda: f64,
    /// One hex-encoded coefficient vector per output step, graded-lex order.
    coefficients: Vec<HexVec>,
    #[serde(default)]
    diagnostics: Vec<FitDiagnostics>,
}

#[derive(Serialize, Deserialize)]
struct HexVec(#[serde(with = "hexfloat::vec")] Vec<f64>);

impl TrajectorySurrogate {
    pub fn to_json(&self) -> Result<String> {
        let doc = SurrogateDoc {
            format_version: 1,
            dimension: self.index_set.dim(),
            max_degree: self.index_set.max_degree(),
            penalty: self.penalty,
            lambda: self.lambda,
            coefficients: self
                .coefficients
                .rows()
                .into_iter()
                .map(|r| HexVec(r.to_vec()))
                .collect(),
            diagnostics: self.diagnostics.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SurrogateDoc = serde_json::from_str(text)?;
        let set = build_index_set(doc.dimension, doc.max_degree)?;
        let steps = doc.coefficients.len();
        let mut coefficients = Array2::zeros((steps, set.len()));
        for (t, row) in doc.coefficients.iter().enumerate() {
            ensure_dim(set.len(), row.0.len())?;
            coefficients
                .row_mut(t)
                .assign(&ArrayView1::from(row.0.as_slice()));
        }
        Ok(Self {
            index_set: set,
            coefficients,
            penalty: doc.penalty,
            lambda: doc.lambda,
            diagnostics: doc.diagnostics,
        })
    }
}

impl PceSurrogate {
    pub fn to_json(&self) -> Result<String> {
        let traj = TrajectorySurrogate {
            index_set: self.index_set.clone(),
            coefficients: Array2::from_shape_vec((1, self.coefficients.len()), self.coefficients.clone())
                .expect("shape"),
            penalty: self.penalty,
            lambda: self.lambda,
            diagnostics: self.diagnostics.iter().cloned().collect(),
        };
        traj.to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let traj = TrajectorySurrogate::from_json(text)?;
        if traj.steps() != 1 {
            return Err(Error::InvalidInput(format!(
                "expected a scalar surrogate, found {} steps",
                traj.steps()
            )));
        }
        Ok(traj.step(0))
    }
}

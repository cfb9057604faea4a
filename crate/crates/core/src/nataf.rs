//! Marginal models plus a Gaussian copula: the Nataf isoprobabilistic map.
//!
//! `S(ξ) = L₀⁻¹ w` with `wᵢ = Φ⁻¹(Fᵢ(ξᵢ))`, and `T = S⁻¹`. `R₀ = L₀L₀ᵀ` is the
//! correlation of the normal scores `w`.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{ensure_dim, Error, Result};
use crate::special::{digamma, ln_beta, norm_cdf, norm_logpdf, norm_pdf, norm_quantile, norm_sf, trigamma};
use crate::transport::TransportMap;

/// Minimum sample count for the parametric maximum-likelihood fits.
pub const MIN_PARAMETRIC_SAMPLES: usize = 50;
const QUANTILE_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalKind {
    Beta,
    Uniform,
    TruncatedNormal,
    Empirical,
}

impl std::str::FromStr for MarginalKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(Self::Beta),
            "uniform" => Ok(Self::Uniform),
            "truncated_normal" | "truncnormal" => Ok(Self::TruncatedNormal),
            "empirical" => Ok(Self::Empirical),
            other => Err(Error::Config(format!("unknown marginal kind `{other}`"))),
        }
    }
}

/// Piecewise-linear CDF through Hazen plotting positions `(i − ½)/N`.
///
/// The first and last segments are extended linearly down to 0 and up to 1,
/// which keeps the map a bijection; every data point itself lands in
/// `[1/(2N), 1 − 1/(2N)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    xs: Vec<f64>,
    ps: Vec<f64>,
    n: usize,
}

impl EmpiricalCdf {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite sample".into()));
        }
        let n = samples.len();
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut xs: Vec<f64> = Vec::with_capacity(n + 2);
        let mut ps: Vec<f64> = Vec::with_capacity(n + 2);
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            // tied values share the average of their positions
            let pos = ((i + j) as f64 / 2.0 + 0.5) / n as f64;
            xs.push(sorted[i]);
            ps.push(pos);
            i = j + 1;
        }
        if xs.len() < 2 {
            return Err(Error::Degenerate("empirical CDF needs two distinct values".into()));
        }
        let k = xs.len();
        let s0 = (ps[1] - ps[0]) / (xs[1] - xs[0]);
        let s1 = (ps[k - 1] - ps[k - 2]) / (xs[k - 1] - xs[k - 2]);
        let lo = xs[0] - ps[0] / s0;
        let hi = xs[k - 1] + (1.0 - ps[k - 1]) / s1;
        xs.insert(0, lo);
        ps.insert(0, 0.0);
        xs.push(hi);
        ps.push(1.0);
        Ok(Self { xs, ps, n })
    }

    pub fn sample_count(&self) -> usize {
        self.n
    }

    pub fn support(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    fn segment(grid: &[f64], v: f64) -> usize {
        // index k with grid[k] ≤ v < grid[k+1], clamped to valid segments
        let k = grid.partition_point(|g| *g <= v);
        k.clamp(1, grid.len() - 1) - 1
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        let k = Self::segment(&self.xs, x);
        let t = (x - self.xs[k]) / (self.xs[k + 1] - self.xs[k]);
        self.ps[k] + t * (self.ps[k + 1] - self.ps[k])
    }

    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return self.xs[0];
        }
        if p >= 1.0 {
            return *self.xs.last().unwrap();
        }
        let k = Self::segment(&self.ps, p);
        let t = (p - self.ps[k]) / (self.ps[k + 1] - self.ps[k]);
        self.xs[k] + t * (self.xs[k + 1] - self.xs[k])
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x < lo || x > hi {
            return 0.0;
        }
        let k = Self::segment(&self.xs, x);
        (self.ps[k + 1] - self.ps[k]) / (self.xs[k + 1] - self.xs[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Beta { alpha: f64, beta: f64, lo: f64, hi: f64 },
    Uniform { lo: f64, hi: f64 },
    TruncatedNormal { mu: f64, sigma: f64, lo: f64, hi: f64 },
    Empirical(EmpiricalCdf),
}

fn check_bounds(lo: f64, hi: f64) -> Result<()> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput(format!("invalid support [{lo}, {hi}]")));
    }
    Ok(())
}

impl Marginal {
    pub fn beta(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0) {
            return Err(Error::InvalidInput("beta shapes must be positive".into()));
        }
        Ok(Marginal::Beta { alpha, beta, lo: 0.0, hi: 1.0 })
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        check_bounds(lo, hi)?;
        Ok(Marginal::Uniform { lo, hi })
    }

    pub fn truncated_normal(mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<Self> {
        check_bounds(lo, hi)?;
        if !(sigma > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidInput("truncated normal needs σ > 0".into()));
        }
        Ok(Marginal::TruncatedNormal { mu, sigma, lo, hi })
    }

    pub fn kind(&self) -> MarginalKind {
        match self {
            Marginal::Beta { .. } => MarginalKind::Beta,
            Marginal::Uniform { .. } => MarginalKind::Uniform,
            Marginal::TruncatedNormal { .. } => MarginalKind::TruncatedNormal,
            Marginal::Empirical(_) => MarginalKind::Empirical,
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            Marginal::Beta { lo, hi, .. }
            | Marginal::Uniform { lo, hi }
            | Marginal::TruncatedNormal { lo, hi, .. } => (*lo, *hi),
            Marginal::Empirical(e) => e.support(),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        match self {
            Marginal::Beta { alpha, beta, .. } => beta_reg(*alpha, *beta, (x - lo) / (hi - lo)),
            Marginal::Uniform { .. } => (x - lo) / (hi - lo),
            Marginal::TruncatedNormal { mu, sigma, .. } => {
                let (a, b) = ((lo - mu) / sigma, (hi - mu) / sigma);
                let t = (x - mu) / sigma;
                tn_mass(a, t) / tn_mass(a, b)
            }
            Marginal::Empirical(e) => e.cdf(x),
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if !(x >= lo && x <= hi) {
            return f64::NEG_INFINITY;
        }
        match self {
            Marginal::Beta { alpha, beta, .. } => {
                let w = hi - lo;
                let u = (x - lo) / w;
                (alpha - 1.0) * u.ln() + (beta - 1.0) * (1.0 - u).ln() - ln_beta(*alpha, *beta) - w.ln()
            }
            Marginal::Uniform { .. } => -(hi - lo).ln(),
            Marginal::TruncatedNormal { mu, sigma, .. } => {
                let (a, b) = ((lo - mu) / sigma, (hi - mu) / sigma);
                norm_logpdf((x - mu) / sigma) - sigma.ln() - tn_mass(a, b).ln()
            }
            Marginal::Empirical(e) => e.pdf(x).ln(),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// Inverse CDF; closed form where available, else safeguarded Newton to ~1e-13.
    pub fn quantile(&self, p: f64) -> f64 {
        let (lo, hi) = self.support();
        if p <= 0.0 {
            return lo;
        }
        if p >= 1.0 {
            return hi;
        }
        match self {
            Marginal::Uniform { .. } => lo + p * (hi - lo),
            Marginal::Empirical(e) => e.quantile(p),
            Marginal::TruncatedNormal { mu, sigma, .. } => {
                let (a, b) = ((lo - mu) / sigma, (hi - mu) / sigma);
                let guess = if a > 0.0 {
                    // upper-tail region: work with survival functions
                    let sa = norm_sf(a);
                    let sb = norm_sf(b);
                    -norm_quantile(sa - p * (sa - sb))
                } else {
                    let pa = norm_cdf(a);
                    norm_quantile(pa + p * tn_mass(a, b))
                };
                let x0 = (mu + sigma * guess).clamp(lo, hi);
                self.polish_quantile(p, x0)
            }
            Marginal::Beta { alpha, beta, .. } => {
                let m = alpha / (alpha + beta);
                self.polish_quantile(p, lo + m * (hi - lo))
            }
        }
    }

    fn polish_quantile(&self, p: f64, x0: f64) -> f64 {
        let (mut a, mut b) = self.support();
        let mut x = x0;
        for _ in 0..200 {
            let f = self.cdf(x) - p;
            if f == 0.0 {
                return x;
            }
            if f > 0.0 {
                b = x;
            } else {
                a = x;
            }
            let d = self.pdf(x);
            let mut next = if d > 0.0 && d.is_finite() { x - f / d } else { f64::NAN };
            if !(next > a && next < b) {
                next = 0.5 * (a + b);
            }
            if (next - x).abs() <= QUANTILE_TOL * (1.0 + x.abs()) || b - a <= QUANTILE_TOL {
                return next;
            }
            x = next;
        }
        x
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }
}

/// `Φ(b) − Φ(a)` computed on the tail that keeps precision.
fn tn_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        norm_sf(a) - norm_sf(b)
    } else {
        norm_cdf(b) - norm_cdf(a)
    }
}

/// Fits a marginal. Beta and truncated-normal kinds assume the unit interval
/// support used for all physical inputs in this crate.
pub fn fit_marginal(samples: &[f64], kind: MarginalKind) -> Result<Marginal> {
    fit_marginal_on(samples, kind, (0.0, 1.0))
}

pub fn fit_marginal_on(samples: &[f64], kind: MarginalKind, support: (f64, f64)) -> Result<Marginal> {
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite sample".into()));
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n.max(1) as f64;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
    if n < 2 || var == 0.0 || samples.iter().all(|v| *v == samples[0]) {
        return Err(Error::Degenerate("marginal samples have zero variance".into()));
    }
    if kind != MarginalKind::Empirical && n < MIN_PARAMETRIC_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "at least {MIN_PARAMETRIC_SAMPLES} samples needed, got {n}"
        )));
    }
    match kind {
        MarginalKind::Empirical => Ok(Marginal::Empirical(EmpiricalCdf::new(samples)?)),
        MarginalKind::Uniform => {
            let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            // Order-statistic estimate widened by one spacing so the extreme
            // samples stay strictly inside the support.
            let pad = (hi - lo) / (n as f64 - 1.0);
            Marginal::uniform(lo - pad, hi + pad)
        }
        MarginalKind::Beta => fit_beta(samples, support),
        MarginalKind::TruncatedNormal => fit_truncated_normal(samples, support, mean, var.sqrt()),
    }
}

fn unit_scaled(samples: &[f64], (lo, hi): (f64, f64)) -> Result<Vec<f64>> {
    check_bounds(lo, hi)?;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if x > lo && x < hi {
                Ok((x - lo) / (hi - lo))
            } else {
                Err(Error::OutOfSupport { coord: i, value: x })
            }
        })
        .collect()
}

fn fit_beta(samples: &[f64], support: (f64, f64)) -> Result<Marginal> {
    let u = unit_scaled(samples, support)?;
    let n = u.len() as f64;
    let g1 = u.iter().map(|v| v.ln()).sum::<f64>() / n;
    let g2 = u.iter().map(|v| (1.0 - v).ln()).sum::<f64>() / n;
    let m = u.iter().sum::<f64>() / n;
    let v = u.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let common = (m * (1.0 - m) / v - 1.0).max(1e-3);
    let (mut a, mut b) = (m * common, (1.0 - m) * common);
    for _ in 0..100 {
        let ps = digamma(a + b);
        let f1 = digamma(a) - ps - g1;
        let f2 = digamma(b) - ps - g2;
        let ts = trigamma(a + b);
        let (j11, j12, j22) = (trigamma(a) - ts, -ts, trigamma(b) - ts);
        let det = j11 * j22 - j12 * j12;
        let da = (j22 * f1 - j12 * f2) / det;
        let db = (j11 * f2 - j12 * f1) / det;
        // halve the step until both shapes stay positive
        let mut t = 1.0;
        while a - t * da <= 0.0 || b - t * db <= 0.0 {
            t *= 0.5;
        }
        a -= t * da;
        b -= t * db;
        if (t * da).abs() < 1e-12 * a && (t * db).abs() < 1e-12 * b {
            break;
        }
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::NonFinite("beta maximum-likelihood fit".into()));
    }
    Ok(Marginal::Beta { alpha: a, beta: b, lo: support.0, hi: support.1 })
}

// Mean log-likelihood of a truncated normal and its gradient in (μ, log σ).
fn tn_loglik(x: &[f64], mu: f64, ls: f64, (lo, hi): (f64, f64)) -> (f64, [f64; 2]) {
    let s = ls.exp();
    let n = x.len() as f64;
    let (a, b) = ((lo - mu) / s, (hi - mu) / s);
    let z = tn_mass(a, b);
    let (pa, pb) = (norm_pdf(a), norm_pdf(b));
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for &v in x {
        let d = v - mu;
        s1 += d;
        s2 += d * d;
    }
    let ll = -ls - s2 / (2.0 * s * s * n) - z.ln() - crate::special::LN_SQRT_2PI;
    let g_mu = s1 / (n * s * s) - (pa - pb) / (s * z);
    // ∂/∂log σ = σ ∂/∂σ
    let g_ls = -1.0 + s2 / (n * s * s) - (a * pa - b * pb) / z;
    (ll, [g_mu, g_ls])
}

fn fit_truncated_normal(samples: &[f64], support: (f64, f64), mean: f64, std: f64) -> Result<Marginal> {
    unit_scaled(samples, support)?;
    let mut p = [mean, std.ln()];
    let (mut ll, mut g) = tn_loglik(samples, p[0], p[1], support);
    for _ in 0..200 {
        // Hessian by central differences of the analytic gradient.
        let h = 1e-6;
        let mut hess = [[0.0; 2]; 2];
        for k in 0..2 {
            let mut up = p;
            let mut dn = p;
            up[k] += h;
            dn[k] -= h;
            let gu = tn_loglik(samples, up[0], up[1], support).1;
            let gd = tn_loglik(samples, dn[0], dn[1], support).1;
            for r in 0..2 {
                hess[r][k] = (gu[r] - gd[r]) / (2.0 * h);
            }
        }
        let sym = 0.5 * (hess[0][1] + hess[1][0]);
        let det = hess[0][0] * hess[1][1] - sym * sym;
        let newton_ok = hess[0][0] < 0.0 && det > 0.0;
        let dir = if newton_ok {
            [
                -(hess[1][1] * g[0] - sym * g[1]) / det,
                -(hess[0][0] * g[1] - sym * g[0]) / det,
            ]
        } else {
            g
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = [p[0] + t * dir[0], p[1] + t * dir[1]];
            let (lc, gc) = tn_loglik(samples, cand[0], cand[1], support);
            if lc.is_finite() && lc >= ll {
                p = cand;
                ll = lc;
                g = gc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || (g[0].abs() < 1e-10 && g[1].abs() < 1e-10) {
            break;
        }
    }
    Marginal::truncated_normal(p[0], p[1].exp(), support.0, support.1)
}

/// Gaussian copula with fitted marginals; implements the Nataf transport map.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCopulaModel {
    marginals: Vec<Marginal>,
    r0: Array2<f64>,
    l0: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct CopulaDoc {
    format_version: u32,
    marginals: Vec<Marginal>,
    /// Row-major `M × M`.
    r0: Vec<f64>,
}

fn cholesky(r: &Array2<f64>) -> Result<Array2<f64>> {
    let m = r.nrows();
    let dm = DMatrix::from_fn(m, m, |i, j| r[[i, j]]);
    let ch = dm
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("correlation matrix is not positive definite".into()))?;
    let l = ch.l();
    Ok(Array2::from_shape_fn((m, m), |(i, j)| l[(i, j)]))
}

/// Projects a symmetric matrix to a correlation matrix: eigenvalues clipped
/// at `1e-8`, then rescaled to unit diagonal.
pub fn nearest_correlation(r: &Array2<f64>) -> Array2<f64> {
    let m = r.nrows();
    let sym = DMatrix::from_fn(m, m, |i, j| 0.5 * (r[[i, j]] + r[[j, i]]));
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|v| v.max(1e-8));
    let rec = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let d: Vec<f64> = (0..m).map(|i| rec[(i, i)].sqrt()).collect();
    Array2::from_shape_fn((m, m), |(i, j)| if i == j { 1.0 } else { rec[(i, j)] / (d[i] * d[j]) })
}

impl GaussianCopulaModel {
    /// Builds a model from known parts; `r0` must already be a valid correlation matrix.
    pub fn new(marginals: Vec<Marginal>, r0: Array2<f64>) -> Result<Self> {
        let m = marginals.len();
        if m == 0 {
            return Err(Error::InvalidInput("empty marginal list".into()));
        }
        ensure_dim(m, r0.nrows())?;
        ensure_dim(m, r0.ncols())?;
        for i in 0..m {
            if (r0[[i, i]] - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput("R0 must have a unit diagonal".into()));
            }
            for j in 0..i {
                if (r0[[i, j]] - r0[[j, i]]).abs() > 1e-12 {
                    return Err(Error::InvalidInput("R0 must be symmetric".into()));
                }
            }
        }
        let l0 = cholesky(&r0)?;
        Ok(Self { marginals, r0, l0 })
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn r0(&self) -> &Array2<f64> {
        &self.r0
    }

    pub fn l0(&self) -> &Array2<f64> {
        &self.l0
    }

    /// `wᵢ = Φ⁻¹(Fᵢ(ξᵢ))`; ξ must lie in the open support.
    pub fn normal_scores(&self, xi: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.marginals.len(), xi.len())?;
        xi.iter()
            .zip(&self.marginals)
            .enumerate()
            .map(|(i, (&x, f))| {
                let (lo, hi) = f.support();
                if !(x > lo && x < hi) {
                    return Err(Error::OutOfSupport { coord: i, value: x });
                }
                let w = norm_quantile(f.cdf(x));
                if w.is_finite() {
                    Ok(w)
                } else {
                    Err(Error::OutOfSupport { coord: i, value: x })
                }
            })
            .collect()
    }

    /// `S(ξ)`.
    pub fn to_latent(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let w = self.normal_scores(xi)?;
        Ok(forward_substitute(&self.l0, &w))
    }

    /// `T(z)`; results are pulled into the open support.
    pub fn to_physical(&self, z: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.marginals.len(), z.len())?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite latent input".into()));
        }
        let w = self.l0.dot(&ndarray::ArrayView1::from(z));
        Ok(w.iter()
            .zip(&self.marginals)
            .map(|(&wi, f)| {
                let u = norm_cdf(wi).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
                f.quantile(u)
            })
            .collect())
    }

    /// Analytic `∂T/∂z = diag(φ(w)/f(ξ))·L₀`.
    pub fn jacobian_at(&self, z: &[f64]) -> Result<Array2<f64>> {
        let xi = self.to_physical(z)?;
        let w = self.l0.dot(&ndarray::ArrayView1::from(z));
        let m = z.len();
        let mut jac = self.l0.clone();
        for i in 0..m {
            let scale = norm_pdf(w[i]) / self.marginals[i].pdf(xi[i]);
            jac.row_mut(i).mapv_inplace(|v| v * scale);
        }
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(Error::MapIrregular { z: z.to_vec() });
        }
        Ok(jac)
    }

    /// Joint log-density of ξ under the copula model.
    pub fn log_pdf(&self, xi: &[f64]) -> f64 {
        let w = match self.normal_scores(xi) {
            Ok(w) => w,
            Err(_) => return f64::NEG_INFINITY,
        };
        let z = forward_substitute(&self.l0, &w);
        let mut lp = 0.0;
        for i in 0..w.len() {
            lp += norm_logpdf(z[i]) - self.l0[[i, i]].ln() - norm_logpdf(w[i]) + self.marginals[i].ln_pdf(xi[i]);
        }
        lp
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = CopulaDoc {
            format_version: 1,
            marginals: self.marginals.clone(),
            r0: self.r0.iter().cloned().collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CopulaDoc = serde_json::from_str(text)?;
        let m = doc.marginals.len();
        let r0 = Array2::from_shape_vec((m, m), doc.r0).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::new(doc.marginals, r0)
    }
}

fn forward_substitute(l: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let m = b.len();
    let mut x = vec![0.0; m];
    for i in 0..m {
        let mut s = b[i];
        for j in 0..i {
            s -= l[[i, j]] * x[j];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Estimates `R₀` on normal scores of `samples` under the supplied marginals.
pub fn fit_copula(samples: ArrayView2<'_, f64>, marginals: Vec<Marginal>) -> Result<GaussianCopulaModel> {
    let m = marginals.len();
    ensure_dim(m, samples.ncols())?;
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::InvalidInput("need at least two samples".into()));
    }
    let mut scores = Array2::zeros((n, m));
    for (i, row) in samples.rows().into_iter().enumerate() {
        for (k, f) in marginals.iter().enumerate() {
            let w = norm_quantile(f.cdf(row[k]));
            if !w.is_finite() {
                return Err(Error::OutOfSupport { coord: k, value: row[k] });
            }
            scores[[i, k]] = w;
        }
    }
    let means = scores.mean_axis(ndarray::Axis(0)).unwrap();
    let centred = &scores - &means;
    let cov = centred.t().dot(&centred) / n as f64;
    let d: Vec<f64> = (0..m).map(|i| cov[[i, i]].sqrt()).collect();
    if d.iter().any(|v| *v == 0.0) {
        return Err(Error::Degenerate("constant normal-score column".into()));
    }
    let corr = Array2::from_shape_fn((m, m), |(i, j)| cov[[i, j]] / (d[i] * d[j]));
    let r0 = nearest_correlation(&corr);
    GaussianCopulaModel::new(marginals, r0)
}

/// Fits every column's marginal of the requested kind, then the copula.
pub fn fit_nataf(samples: ArrayView2<'_, f64>, kinds: &[MarginalKind]) -> Result<GaussianCopulaModel> {
    ensure_dim(samples.ncols(), kinds.len())?;
    let marginals = kinds
        .iter()
        .enumerate()
        .map(|(k, &kind)| fit_marginal(&samples.column(k).to_vec(), kind))
        .collect::<Result<Vec<_>>>()?;
    fit_copula(samples, marginals)
}

impl TransportMap for GaussianCopulaModel {
    fn dim(&self) -> usize {
        self.marginals.len()
    }

    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.to_physical(z)
    }

    fn inverse(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.to_latent(xi)
    }

    fn jacobian(&self, z: &[f64]) -> Option<Result<Array2<f64>>> {
        Some(self.jacobian_at(z))
    }
}

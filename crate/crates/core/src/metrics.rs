//! Accuracy and fidelity metrics: NIRMSE of trajectory statistics, forward KL,
//! sliced 2-Wasserstein distance, the map smoothness index and the error budget.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::flow::{standard_normal, FlowModel};
use crate::nataf::GaussianCopulaModel;
use crate::regression::TrajectorySurrogate;
use crate::transport::TransportMap;

pub const DEFAULT_PROJECTIONS: usize = 128;
pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const MIN_MSI_SAMPLES: usize = 1000;

/// Per-timestep mean and standard deviation of a trajectory ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub time: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: usize,
}

impl TrajectoryStats {
    pub fn new(time: Vec<f64>, mean: Vec<f64>, std: Vec<f64>, count: usize) -> Result<Self> {
        ensure_dim(time.len(), mean.len())?;
        ensure_dim(time.len(), std.len())?;
        if std.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidInput("standard deviations must be non-negative".into()));
        }
        Ok(Self { time, mean, std, count })
    }

    /// Sample statistics of the rows of `runs` (one trajectory per row,
    /// unbiased variance).
    pub fn from_runs(time: Vec<f64>, runs: ArrayView2<'_, f64>) -> Result<Self> {
        ensure_dim(time.len(), runs.ncols())?;
        let n = runs.nrows();
        if n < 2 {
            return Err(Error::Degenerate(format!("trajectory std needs at least 2 runs, got {n}")));
        }
        let mean = runs.mean_axis(Axis(0)).expect("non-empty");
        let std = runs.std_axis(Axis(0), 1.0);
        Self::new(time, mean.to_vec(), std.to_vec(), n)
    }

    /// Standard error of the mean at each timestep.
    pub fn mean_std_error(&self) -> Vec<f64> {
        let r = (self.count as f64).sqrt();
        self.std.iter().map(|s| s / r).collect()
    }
}

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn check_grids(r: &TrajectoryStats, e: &TrajectoryStats) -> Result<()> {
    if r.time != e.time {
        return Err(Error::InvalidInput("trajectory grids differ".into()));
    }
    Ok(())
}

/// `‖μ_ref − μ̂‖₂ / ‖μ_ref‖₂`.
pub fn mean_error(r: &TrajectoryStats, e: &TrajectoryStats) -> Result<f64> {
    check_grids(r, e)?;
    let norm = l2(r.mean.iter().cloned());
    if norm == 0.0 {
        return Err(Error::Degenerate("reference mean trajectory is identically zero".into()));
    }
    Ok(l2(r.mean.iter().zip(&e.mean).map(|(a, b)| a - b)) / norm)
}

/// `‖σ_ref − σ̂‖₂ / ‖σ_ref‖₂`.
pub fn std_error(r: &TrajectoryStats, e: &TrajectoryStats) -> Result<f64> {
    check_grids(r, e)?;
    let norm = l2(r.std.iter().cloned());
    if norm == 0.0 {
        return Err(Error::Degenerate("reference std trajectory is identically zero".into()));
    }
    Ok(l2(r.std.iter().zip(&e.std).map(|(a, b)| a - b)) / norm)
}

/// Normalized integrated RMS error combining the mean and spread errors.
pub fn nirmse(r: &TrajectoryStats, e: &TrajectoryStats) -> Result<f64> {
    let m = mean_error(r, e)?;
    let s = std_error(r, e)?;
    Ok(m.hypot(s))
}

/// A distribution that can be sampled and whose log-density is known.
pub trait Density: Sync {
    fn dim(&self) -> usize;

    /// `-∞` outside the support.
    fn log_density(&self, x: &[f64]) -> f64;

    fn draw(&self, n: usize, seed: u64) -> Result<Array2<f64>>;

    fn log_density_batch(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let v: Vec<f64> = (0..x.nrows()).into_par_iter().map(|i| self.log_density(&x.row(i).to_vec())).collect();
        Array1::from(v)
    }
}

impl Density for FlowModel {
    fn dim(&self) -> usize {
        TransportMap::dim(self)
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_prob(x).unwrap_or(f64::NAN)
    }

    fn draw(&self, n: usize, seed: u64) -> Result<Array2<f64>> {
        self.sample(n, seed)
    }

    fn log_density_batch(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        self.log_prob_batch(x).unwrap_or_else(|_| Array1::from_elem(x.nrows(), f64::NAN))
    }
}

impl Density for GaussianCopulaModel {
    fn dim(&self) -> usize {
        self.marginals().len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_pdf(x)
    }

    fn draw(&self, n: usize, seed: u64) -> Result<Array2<f64>> {
        let z = standard_normal(n, Density::dim(self), seed);
        self.forward_batch(z.view())
    }
}

/// JSON has no infinities or NaN; those are written as the strings
/// `"inf"`, `"-inf"` and `"nan"`.
mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            v if v.is_finite() => s.serialize_f64(v),
            v if v.is_nan() => s.serialize_str("nan"),
            v if v > 0.0 => s.serialize_str("inf"),
            _ => s.serialize_str("-inf"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    #[serde(with = "nonfinite")]
    pub value: f64,
    #[serde(with = "nonfinite")]
    pub std_error: f64,
    /// Set when the model assigns zero density to some truth sample.
    pub infinite: bool,
    pub n: usize,
    pub seed: u64,
}

/// Monte-Carlo estimate of `D_KL(truth ‖ model)` from `n` draws of `truth`.
pub fn forward_kl(truth: &dyn Density, model: &dyn Density, n: usize, seed: u64) -> Result<KlEstimate> {
    ensure_dim(truth.dim(), model.dim())?;
    if n < 2 {
        return Err(Error::InvalidInput("KL estimate needs at least 2 samples".into()));
    }
    let x = truth.draw(n, seed)?;
    let lp = truth.log_density_batch(x.view());
    let lq = model.log_density_batch(x.view());
    if lp.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("true log-density at one of its own samples".into()));
    }
    if lq.iter().any(|v| !v.is_finite()) {
        return Ok(KlEstimate { value: f64::INFINITY, std_error: f64::NAN, infinite: true, n, seed });
    }
    let d = &lp - &lq;
    let value = d.mean().expect("n ≥ 2");
    let std_error = d.std(1.0) / (n as f64).sqrt();
    Ok(KlEstimate { value, std_error, infinite: false, n, seed })
}

/// Squared W2 between two 1-D empirical laws given as sorted samples, by
/// integrating the squared difference of the quantile functions exactly.
fn w2_sq_sorted(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == b.len() {
        return a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut acc = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i + 1) as f64 / na;
        let next_b = (j + 1) as f64 / nb;
        let next = next_a.min(next_b);
        let d = a[i] - b[j];
        acc += (next - u) * d * d;
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    acc
}

/// Uniform directions drawn in orthonormal blocks: each block holds the
/// columns of a Haar-random rotation (Gram–Schmidt on Gaussian columns).
/// Every direction is still uniform on the sphere, but within a full block the
/// squared projections of any vector sum to its squared norm, which removes
/// most of the direction noise from the sliced estimate.
fn unit_directions(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut block: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while out.len() < n {
        if block.len() == dim {
            block.clear();
        }
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for q in &block {
            let c: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
        }
        let norm = l2(v.iter().cloned());
        if norm > 1e-8 {
            let u: Vec<f64> = v.into_iter().map(|x| x / norm).collect();
            block.push(u.clone());
            out.push(u);
        }
    }
    out
}

/// Sliced 2-Wasserstein distance between two sample sets, averaging squared
/// 1-D distances over `n_proj` seeded uniform directions.
pub fn sliced_w2(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, n_proj: usize, seed: u64) -> Result<f64> {
    ensure_dim(a.ncols(), b.ncols())?;
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::InvalidInput("sliced W2 needs non-empty sample sets".into()));
    }
    if n_proj < 32 {
        return Err(Error::InvalidInput(format!("at least 32 projections required, got {n_proj}")));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("samples passed to sliced W2".into()));
    }
    let dirs = unit_directions(a.ncols(), n_proj, seed);
    let project = |x: ArrayView2<'_, f64>, d: &[f64]| {
        let mut p: Vec<f64> = x.outer_iter().map(|r| r.iter().zip(d).map(|(u, v)| u * v).sum()).collect();
        p.sort_by(f64::total_cmp);
        p
    };
    let per: Vec<f64> = dirs
        .par_iter()
        .map(|d| w2_sq_sorted(&project(a, d), &project(b, d)))
        .collect();
    Ok((per.iter().sum::<f64>() / n_proj as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsiOptions {
    pub n: usize,
    pub seed: u64,
    pub step: f64,
    /// Use the map's own Jacobian when it has one instead of finite differences.
    pub analytic: bool,
}

impl Default for MsiOptions {
    fn default() -> Self {
        Self { n: 10_000, seed: 0, step: DEFAULT_FD_STEP, analytic: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsiEstimate {
    pub value: f64,
    pub options: MsiOptions,
    pub analytic_used: bool,
}

/// Map smoothness index: RMS Frobenius norm of `∂T/∂z` under `z ~ N(0, I)`,
/// normalized by `√M`.
pub fn msi(map: &dyn TransportMap, opts: MsiOptions) -> Result<MsiEstimate> {
    let m = map.dim();
    if opts.n < MIN_MSI_SAMPLES {
        return Err(Error::InvalidInput(format!("MSI needs at least {MIN_MSI_SAMPLES} latent draws, got {}", opts.n)));
    }
    let z = standard_normal(opts.n, m, opts.seed);
    let analytic = opts.analytic && map.jacobian(&vec![0.0; m]).is_some();
    // squared Frobenius norm per draw
    let fro = if analytic {
        let v: Vec<f64> = (0..opts.n)
            .into_par_iter()
            .map(|i| {
                let zi = z.row(i).to_vec();
                let j = map.jacobian(&zi).expect("checked above")?;
                let s: f64 = j.iter().map(|v| v * v).sum();
                if s.is_finite() {
                    Ok(s)
                } else {
                    Err(Error::MapIrregular { z: zi })
                }
            })
            .collect::<Result<_>>()?;
        Array1::from(v)
    } else {
        let mut acc = Array1::<f64>::zeros(opts.n);
        for k in 0..m {
            let mut up = z.clone();
            up.column_mut(k).mapv_inplace(|v| v + opts.step);
            let mut dn = z.clone();
            dn.column_mut(k).mapv_inplace(|v| v - opts.step);
            let col = (map.forward_batch(up.view())? - map.forward_batch(dn.view())?) / (2.0 * opts.step);
            acc += &col.map_axis(Axis(1), |r| r.dot(&r));
        }
        if let Some(i) = acc.iter().position(|v| !v.is_finite()) {
            return Err(Error::MapIrregular { z: z.row(i).to_vec() });
        }
        acc
    };
    let value = (fro.mean().expect("n ≥ 1") / m as f64).sqrt();
    Ok(MsiEstimate { value, options: opts, analytic_used: analytic })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub w2_estimate: f64,
    pub msi: f64,
    /// Largest number of nonzero coefficients across timesteps.
    pub sparsity: usize,
    pub basis_size: usize,
    pub sample_count: usize,
    pub degree: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetOptions {
    pub model_samples: usize,
    pub projections: usize,
    pub msi: MsiOptions,
    pub seed: u64,
}

impl Default for BudgetOptions {
    fn default() -> Self {
        Self { model_samples: 10_000, projections: DEFAULT_PROJECTIONS, msi: MsiOptions::default(), seed: 0 }
    }
}

/// Measurable factors of the end-to-end error bound for a fitted pipeline.
pub fn error_budget(
    map: &dyn TransportMap,
    surrogate: &TrajectorySurrogate,
    data: ArrayView2<'_, f64>,
    regression_samples: usize,
    opts: BudgetOptions,
) -> Result<ErrorBudget> {
    ensure_dim(map.dim(), data.ncols())?;
    ensure_dim(map.dim(), surrogate.index_set().dim())?;
    let z = standard_normal(opts.model_samples, map.dim(), opts.seed);
    let model = map.forward_batch(z.view())?;
    Ok(ErrorBudget {
        w2_estimate: sliced_w2(data, model.view(), opts.projections, opts.seed)?,
        msi: msi(map, opts.msi)?.value,
        sparsity: surrogate.max_nonzero(),
        basis_size: surrogate.index_set().len(),
        sample_count: regression_samples,
        degree: surrogate.index_set().max_degree(),
    })
}

/// Lloyd's 2-means with farthest-point initialization; centers are returned
/// sorted by their first coordinate.
pub fn two_means(x: ArrayView2<'_, f64>, max_iter: usize) -> Result<[Vec<f64>; 2]> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidInput("2-means needs at least 2 points".into()));
    }
    let dist2 = |a: &[f64], b: ndarray::ArrayView1<'_, f64>| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
    let mean = x.mean_axis(Axis(0)).expect("non-empty").to_vec();
    let far = |from: &[f64]| {
        (0..n)
            .max_by(|&i, &j| dist2(from, x.row(i)).total_cmp(&dist2(from, x.row(j))))
            .expect("non-empty")
    };
    let c0 = x.row(far(&mean)).to_vec();
    let c1 = x.row(far(&c0)).to_vec();
    let mut centers = [c0, c1];
    for _ in 0..max_iter {
        let mut sums = [vec![0.0; x.ncols()], vec![0.0; x.ncols()]];
        let mut counts = [0usize; 2];
        for r in x.outer_iter() {
            let k = usize::from(dist2(&centers[1], r) < dist2(&centers[0], r));
            counts[k] += 1;
            sums[k].iter_mut().zip(r).for_each(|(s, v)| *s += v);
        }
        let mut next = centers.clone();
        for k in 0..2 {
            if counts[k] > 0 {
                next[k] = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            }
        }
        if next == centers {
            break;
        }
        centers = next;
    }
    centers.sort_by(|a, b| a[0].total_cmp(&b[0]));
    Ok(centers)
}

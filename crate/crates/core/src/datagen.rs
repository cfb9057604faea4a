//! Seeded synthetic input laws with exact log-densities: a Gaussian copula
//! with parametric marginals and a box-truncated Gaussian mixture.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::metrics::Density;
use crate::nataf::{GaussianCopulaModel, Marginal};
use crate::special::{norm_cdf, norm_logpdf, norm_quantile};

/// Below this expected acceptance rate the mixture is sampled by inverse CDF.
const MIN_REJECTION_RATE: f64 = 0.1;

/// One diagonal-covariance component of a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticSpec {
    GaussianCopula { marginals: Vec<Marginal>, r0: Vec<Vec<f64>>, seed: u64, samples: usize },
    TruncGmm { modes: Vec<Mode>, lo: Vec<f64>, hi: Vec<f64>, seed: u64, samples: usize },
}

impl SyntheticSpec {
    /// Beta(2,5), U(0.2,0.8) and TN(0.5, 0.1) on [0,1] joined by a Gaussian
    /// copula; 100,000 samples.
    pub fn copula_benchmark(seed: u64) -> Self {
        SyntheticSpec::GaussianCopula {
            marginals: vec![
                Marginal::beta(2.0, 5.0).expect("valid"),
                Marginal::uniform(0.2, 0.8).expect("valid"),
                Marginal::truncated_normal(0.5, 0.1, 0.0, 1.0).expect("valid"),
            ],
            r0: vec![vec![1.0, 0.5, 0.2], vec![0.5, 1.0, 0.3], vec![0.2, 0.3, 1.0]],
            seed,
            samples: 100_000,
        }
    }

    /// Equal-weight two-mode mixture with `Σ = 0.02 I` truncated to [0,1]³;
    /// 30,000 samples.
    pub fn mixture_benchmark(seed: u64) -> Self {
        let mode = |mean: Vec<f64>| Mode { weight: 0.5, mean, variance: vec![0.02; 3] };
        SyntheticSpec::TruncGmm {
            modes: vec![mode(vec![0.25, 0.30, 0.35]), mode(vec![0.75, 0.70, 0.65])],
            lo: vec![0.0; 3],
            hi: vec![1.0; 3],
            seed,
            samples: 30_000,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            SyntheticSpec::GaussianCopula { seed, .. } | SyntheticSpec::TruncGmm { seed, .. } => *seed,
        }
    }

    pub fn samples(&self) -> usize {
        match self {
            SyntheticSpec::GaussianCopula { samples, .. } | SyntheticSpec::TruncGmm { samples, .. } => *samples,
        }
    }

    pub fn with_seed(mut self, s: u64) -> Self {
        match &mut self {
            SyntheticSpec::GaussianCopula { seed, .. } | SyntheticSpec::TruncGmm { seed, .. } => *seed = s,
        }
        self
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        match &mut self {
            SyntheticSpec::GaussianCopula { samples, .. } | SyntheticSpec::TruncGmm { samples, .. } => *samples = n,
        }
        self
    }

    pub fn law(&self) -> Result<SyntheticLaw> {
        match self {
            SyntheticSpec::GaussianCopula { marginals, r0, .. } => {
                let m = marginals.len();
                if r0.len() != m || r0.iter().any(|r| r.len() != m) {
                    return Err(Error::Config(format!("R0 must be {m}×{m}")));
                }
                let r = Array2::from_shape_fn((m, m), |(i, j)| r0[i][j]);
                Ok(SyntheticLaw::Copula(GaussianCopulaModel::new(marginals.clone(), r)?))
            }
            SyntheticSpec::TruncGmm { modes, lo, hi, .. } => Ok(SyntheticLaw::Mixture(TruncatedMixture::new(
                modes.clone(),
                lo.clone(),
                hi.clone(),
            )?)),
        }
    }
}

/// Mixture of diagonal Gaussians restricted to a box.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedMixture {
    modes: Vec<Mode>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    sd: Vec<Vec<f64>>,
    /// Box mass of each mode.
    mass: Vec<f64>,
    ln_norm: f64,
}

impl TruncatedMixture {
    pub fn new(modes: Vec<Mode>, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let m = lo.len();
        ensure_dim(m, hi.len())?;
        if modes.is_empty() || m == 0 {
            return Err(Error::Config("mixture needs at least one mode and one dimension".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::Config("box bounds must satisfy lo < hi".into()));
        }
        let wsum: f64 = modes.iter().map(|k| k.weight).sum();
        if modes.iter().any(|k| !(k.weight > 0.0)) || (wsum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture weights must be positive and sum to 1 (sum {wsum})")));
        }
        for k in &modes {
            ensure_dim(m, k.mean.len())?;
            ensure_dim(m, k.variance.len())?;
            if k.variance.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Config("mode variances must be positive".into()));
            }
        }
        let sd: Vec<Vec<f64>> = modes.iter().map(|k| k.variance.iter().map(|v| v.sqrt()).collect()).collect();
        let mass: Vec<f64> = modes
            .iter()
            .zip(&sd)
            .map(|(k, s)| {
                (0..m)
                    .map(|i| norm_cdf((hi[i] - k.mean[i]) / s[i]) - norm_cdf((lo[i] - k.mean[i]) / s[i]))
                    .product()
            })
            .collect();
        let z: f64 = modes.iter().zip(&mass).map(|(k, z)| k.weight * z).sum();
        if !(z > 0.0) {
            return Err(Error::Config("mixture has no mass inside the box".into()));
        }
        Ok(Self { modes, lo, hi, sd, mass, ln_norm: z.ln() })
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    /// Probability that an untruncated draw lands in the box.
    pub fn box_mass(&self) -> f64 {
        self.ln_norm.exp()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// Draws `n` samples; returns them with the observed acceptance rate.
    pub fn sample(&self, n: usize, seed: u64) -> (Array2<f64>, f64) {
        let m = self.lo.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Array2::zeros((n, m));
        if self.box_mass() < MIN_REJECTION_RATE {
            self.sample_inverse_cdf(&mut rng, &mut out);
            return (out, 1.0);
        }
        let mut proposed = 0usize;
        let mut x = vec![0.0; m];
        for i in 0..n {
            loop {
                proposed += 1;
                let k = self.pick(&mut rng, |mode, _| mode.weight);
                for (j, v) in x.iter_mut().enumerate() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *v = self.modes[k].mean[j] + self.sd[k][j] * e;
                }
                if self.contains(&x) {
                    out.row_mut(i).assign(&ndarray::ArrayView1::from(x.as_slice()));
                    break;
                }
            }
        }
        (out, n as f64 / proposed.max(1) as f64)
    }

    fn pick(&self, rng: &mut ChaCha8Rng, w: impl Fn(&Mode, usize) -> f64) -> usize {
        let total: f64 = self.modes.iter().enumerate().map(|(k, m)| w(m, k)).sum();
        let mut u = rng.random::<f64>() * total;
        for (k, mode) in self.modes.iter().enumerate() {
            u -= w(mode, k);
            if u < 0.0 {
                return k;
            }
        }
        self.modes.len() - 1
    }

    /// Exact sampler: the truncated mixture is a mixture of truncated
    /// products with weights proportional to `wₖ · massₖ`.
    fn sample_inverse_cdf(&self, rng: &mut ChaCha8Rng, out: &mut Array2<f64>) {
        for mut row in out.rows_mut() {
            let k = self.pick(rng, |mode, k| mode.weight * self.mass[k]);
            for (j, v) in row.iter_mut().enumerate() {
                let (mu, s) = (self.modes[k].mean[j], self.sd[k][j]);
                let a = norm_cdf((self.lo[j] - mu) / s);
                let b = norm_cdf((self.hi[j] - mu) / s);
                let u: f64 = rng.random();
                *v = (mu + s * norm_quantile(a + u * (b - a))).clamp(self.lo[j], self.hi[j]);
            }
        }
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        if x.len() != self.lo.len() || !self.contains(x) {
            return f64::NEG_INFINITY;
        }
        let terms: Vec<f64> = self
            .modes
            .iter()
            .zip(&self.sd)
            .map(|(k, s)| {
                k.weight.ln()
                    + x.iter()
                        .enumerate()
                        .map(|(i, v)| norm_logpdf((v - k.mean[i]) / s[i]) - s[i].ln())
                        .sum::<f64>()
            })
            .collect();
        let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln() - self.ln_norm
    }
}

/// The ground-truth law behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticLaw {
    Copula(GaussianCopulaModel),
    Mixture(TruncatedMixture),
}

impl Density for SyntheticLaw {
    fn dim(&self) -> usize {
        match self {
            SyntheticLaw::Copula(c) => c.marginals().len(),
            SyntheticLaw::Mixture(m) => m.lo.len(),
        }
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            SyntheticLaw::Copula(c) => c.log_pdf(x),
            SyntheticLaw::Mixture(m) => m.log_pdf(x),
        }
    }

    fn draw(&self, n: usize, seed: u64) -> Result<Array2<f64>> {
        match self {
            SyntheticLaw::Copula(c) => c.draw(n, seed),
            SyntheticLaw::Mixture(m) => Ok(m.sample(n, seed).0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Array2<f64>,
    /// Rejection-sampling acceptance rate, for mixtures.
    pub acceptance_rate: Option<f64>,
    pub law: SyntheticLaw,
}

pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    let law = spec.law()?;
    let (samples, acceptance_rate) = match &law {
        SyntheticLaw::Mixture(m) => {
            let (s, rate) = m.sample(spec.samples(), spec.seed());
            (s, Some(rate))
        }
        SyntheticLaw::Copula(_) => (law.draw(spec.samples(), spec.seed())?, None),
    };
    Ok(Dataset { samples, acceptance_rate, law })
}

/// Writes one row per sample with 17 significant digits.
pub fn write_csv(path: &Path, samples: ArrayView2<'_, f64>, header: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if !header.is_empty() {
        ensure_dim(samples.ncols(), header.len())?;
        w.write_record(header).map_err(csv_err)?;
    }
    for r in samples.rows() {
        w.write_record(r.iter().map(|v| format!("{v:.16e}"))).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    crate::fsutil::atomic_write(path, &bytes)
}

/// Reads a numeric CSV; a non-numeric first row is taken as a header.
pub fn read_csv(path: &Path) -> Result<(Array2<f64>, Vec<String>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    let mut header = Vec::new();
    let mut data = Vec::new();
    let mut cols = None;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) => {
                if *cols.get_or_insert(v.len()) != v.len() {
                    return Err(Error::InvalidInput(format!("{}: row {} has {} fields", path.display(), i + 1, v.len())));
                }
                data.extend(v);
            }
            Err(_) if i == 0 => header = rec.iter().map(str::to_string).collect(),
            Err(e) => return Err(Error::InvalidInput(format!("{}: row {}: {e}", path.display(), i + 1))),
        }
    }
    let cols = cols.ok_or_else(|| Error::InvalidInput(format!("{} has no data rows", path.display())))?;
    let rows = data.len() / cols;
    Ok((Array2::from_shape_vec((rows, cols), data).expect("rectangular"), header))
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(e.to_string())
}

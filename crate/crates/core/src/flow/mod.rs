//! Normalizing flows (additive coupling, masked affine autoregressive and
//! rational-quadratic spline coupling) trained by maximum likelihood.
//!
//! Layers are stored in normalizing order (data side first). The generative
//! map `T` runs them backwards through their analytic inverses.

pub mod checkpoint;
pub mod layers;
pub mod spline;
pub mod tape;
pub mod train;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::special::LN_SQRT_2PI;
use crate::transport::TransportMap;
use layers::{made_masks, Layer, Mlp, TapePass};
use spline::SplineShape;
use tape::{Tape, Var};

pub use train::train;

/// Rows per tape when evaluating densities outside training.
const EVAL_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Nsf,
    Maf,
    Nice,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Nsf, Arch::Maf, Arch::Nice];

    pub fn label(self) -> &'static str {
        match self {
            Arch::Nsf => "NSF",
            Arch::Maf => "MAF",
            Arch::Nice => "NICE",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nsf" => Ok(Arch::Nsf),
            "maf" => Ok(Arch::Maf),
            "nice" => Ok(Arch::Nice),
            other => Err(Error::Config(format!("unknown flow architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub arch: Arch,
    pub layers: usize,
    pub hidden: Vec<usize>,
    pub bins: usize,
    pub tail_bound: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub patience: usize,
    pub seed: u64,
    /// Fold a per-coordinate standardization into the data side of `T`.
    pub whiten: bool,
    /// Minimum number of training rows.
    pub min_samples: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Nsf,
            layers: 5,
            hidden: vec![64, 64],
            bins: 8,
            tail_bound: 4.0,
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-3,
            validation_fraction: 0.1,
            patience: 20,
            seed: 0,
            whiten: true,
            min_samples: 500,
        }
    }
}

impl FlowConfig {
    pub fn with_arch(arch: Arch) -> Self {
        Self { arch, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.layers == 0 {
            return bad("flow needs at least one layer");
        }
        if self.arch == Arch::Nsf && (self.bins < 2 || !(self.tail_bound > 0.0)) {
            return bad("spline flow needs ≥ 2 bins and a positive tail bound");
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return bad("batch size and learning rate must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub seed: u64,
    pub train_nll: Vec<f64>,
    /// Entry 0 is the untrained model; entry `e` follows epoch `e`.
    pub val_nll: Vec<f64>,
    pub best_epoch: usize,
}

impl TrainingTrace {
    pub fn best_val_nll(&self) -> Option<f64> {
        self.val_nll.get(self.best_epoch).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    dim: usize,
    config: FlowConfig,
    layers: Vec<Layer>,
    trace: TrainingTrace,
}

impl FlowModel {
    /// The identity map on `R^dim` with a standard normal base.
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            config: FlowConfig::default(),
            layers: Vec::new(),
            trace: TrainingTrace::default(),
        }
    }

    pub fn from_layers(dim: usize, config: FlowConfig, layers: Vec<Layer>) -> Self {
        Self { dim, config, layers, trace: TrainingTrace::default() }
    }

    /// Identity-initialized architecture; `whitening` gives per-coordinate mean and std.
    pub fn build(dim: usize, config: &FlowConfig, whitening: Option<(&[f64], &[f64])>) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::InvalidInput("flow dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut layers = Vec::new();
        if let Some((mean, std)) = whitening {
            ensure_dim(dim, mean.len())?;
            ensure_dim(dim, std.len())?;
            if std.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::Degenerate("zero-variance data column".into()));
            }
            layers.push(Layer::AffineScalar {
                log_scale: Array2::from_shape_fn((1, dim), |(_, j)| std[j].ln()),
                shift: Array2::from_shape_fn((1, dim), |(_, j)| mean[j]),
                trainable: false,
            });
        }
        let split = dim / 2;
        let d = dim - split;
        for k in 0..config.layers {
            if k > 0 {
                layers.push(Layer::reversal(dim));
            }
            let layer = match config.arch {
                Arch::Nice => Layer::AdditiveCoupling {
                    split,
                    net: Mlp::new(split, &config.hidden, d, None, &mut rng),
                },
                Arch::Nsf => {
                    let shape = SplineShape { bins: config.bins, bound: config.tail_bound };
                    Layer::RqSplineCoupling {
                        split,
                        shape,
                        net: Mlp::new(split, &config.hidden, d * shape.params_per_dim(), None, &mut rng),
                    }
                }
                Arch::Maf => Layer::AffineAutoregressive {
                    net: Mlp::new(dim, &config.hidden, 2 * dim, Some(made_masks(dim, &config.hidden, 2)), &mut rng),
                },
            };
            layers.push(layer);
        }
        if config.arch == Arch::Nice {
            layers.push(Layer::AffineScalar {
                log_scale: Array2::zeros((1, dim)),
                shift: Array2::zeros((1, dim)),
                trainable: true,
            });
        }
        Ok(Self { dim, config: config.clone(), layers, trace: TrainingTrace::default() })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn trace(&self) -> &TrainingTrace {
        &self.trace
    }

    pub(crate) fn set_trace(&mut self, trace: TrainingTrace) {
        self.trace = trace;
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Normalizing pass on the tape; returns the latent node and the pass record.
    pub fn s_tape(&self, tape: &mut Tape, x: Var) -> (Var, TapePass) {
        let mut pass = TapePass::default();
        let mut h = x;
        for layer in &self.layers {
            h = layer.s_tape(tape, h, &mut pass);
        }
        (h, pass)
    }

    /// Mean negative log-likelihood node and the trainable parameter leaves.
    pub fn nll_tape(&self, tape: &mut Tape, x: Array2<f64>) -> (Var, Vec<Var>) {
        let n = x.nrows() as f64;
        let xv = tape.leaf(x);
        let (z, pass) = self.s_tape(tape, xv);
        let sq = tape.square(z);
        let ssq = tape.sum_all(sq);
        let mut loss = tape.scale(ssq, 0.5 / n);
        if let Some(r) = pass.row_logdet {
            let sr = tape.sum_all(r);
            let t = tape.scale(sr, -1.0 / n);
            loss = tape.add(loss, t);
        }
        if let Some(c) = pass.const_logdet {
            loss = tape.sub(loss, c);
        }
        (loss, pass.params)
    }

    /// Constant part of the mean NLL not carried on the tape.
    pub(crate) fn nll_offset(&self) -> f64 {
        self.dim as f64 * LN_SQRT_2PI
    }

    /// `S` on a batch with log|det ∂S/∂ξ| per row.
    pub fn inverse_with_logdet(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        ensure_dim(self.dim, x.ncols())?;
        let n = x.nrows();
        let mut z = Array2::zeros((n, self.dim));
        let mut ld = Array1::zeros(n);
        let mut start = 0;
        while start < n {
            let end = (start + EVAL_CHUNK).min(n);
            let mut tape = Tape::new();
            let xv = tape.leaf(x.slice(ndarray::s![start..end, ..]).to_owned());
            let (zv, pass) = self.s_tape(&mut tape, xv);
            z.slice_mut(ndarray::s![start..end, ..]).assign(tape.value(zv));
            let mut chunk = Array1::zeros(end - start);
            if let Some(r) = pass.row_logdet {
                chunk += &tape.value(r).column(0);
            }
            if let Some(c) = pass.const_logdet {
                chunk += tape.value(c)[[0, 0]];
            }
            ld.slice_mut(ndarray::s![start..end]).assign(&chunk);
            start = end;
        }
        Ok((z, ld))
    }

    /// `T` on a batch with log|det ∂T/∂z| per row.
    pub fn forward_with_logdet(&self, z: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        ensure_dim(self.dim, z.ncols())?;
        let mut ld = Array1::zeros(z.nrows());
        let mut h = z.to_owned();
        for layer in self.layers.iter().rev() {
            h = layer.t_plain(&h, &mut ld);
        }
        Ok((h, ld))
    }

    pub fn log_prob_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite data".into()));
        }
        let (z, ld) = self.inverse_with_logdet(x)?;
        let base = z.map_axis(Axis(1), |r| -0.5 * r.dot(&r) - self.nll_offset());
        Ok(base + ld)
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        let a = ndarray::ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(self.log_prob_batch(a)?[0])
    }

    pub fn mean_nll(&self, x: ArrayView2<'_, f64>) -> Result<f64> {
        let lp = self.log_prob_batch(x)?;
        Ok(-lp.mean().unwrap_or(f64::NAN))
    }

    /// `n` draws `T(z)` with `z ~ N(0, I)` from a seeded generator.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Array2<f64>> {
        let z = standard_normal(n, self.dim, seed);
        Ok(self.forward_with_logdet(z.view())?.0)
    }
}

/// Seeded `n × dim` draws from the standard normal.
pub fn standard_normal(n: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, dim), || StandardNormal.sample(&mut rng))
}

impl TransportMap for FlowModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        let a = ArrayView2::from_shape((1, z.len()), z).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(self.forward_with_logdet(a)?.0.row(0).to_vec())
    }

    fn inverse(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let a = ArrayView2::from_shape((1, xi.len()), xi).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(self.inverse_with_logdet(a)?.0.row(0).to_vec())
    }

    fn forward_batch(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_with_logdet(z)?.0)
    }

    fn inverse_batch(&self, xi: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.inverse_with_logdet(xi)?.0)
    }
}

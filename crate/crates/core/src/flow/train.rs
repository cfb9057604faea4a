//! Maximum-likelihood training with Adam and early stopping on a held-out split.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::Tape;
use super::{FlowConfig, FlowModel, TrainingTrace};
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

pub struct Adam {
    lr: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            step: 0,
            m: shapes.iter().map(|s| Array2::zeros(*s)).collect(),
            v: shapes.iter().map(|s| Array2::zeros(*s)).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        for (k, p) in params.iter_mut().enumerate() {
            let g = &grads[k];
            ndarray::Zip::from(&mut **p)
                .and(&mut self.m[k])
                .and(&mut self.v[k])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                });
        }
    }
}

/// Mean NLL and its gradient for every trainable tensor.
pub fn nll_and_grad(model: &FlowModel, x: Array2<f64>) -> (f64, Vec<Array2<f64>>) {
    let mut tape = Tape::new();
    let (loss, pvars) = model.nll_tape(&mut tape, x);
    let value = tape.value(loss)[[0, 0]] + model.nll_offset();
    let mut g = tape.backward(loss);
    let grads = pvars
        .iter()
        .zip(model.params())
        .map(|(v, p)| g.take_or_zeros(*v, p.dim()))
        .collect();
    (value, grads)
}

fn column_moments(x: ArrayView2<'_, f64>) -> (Vec<f64>, Vec<f64>) {
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let std = x.std_axis(Axis(0), 0.0);
    (mean.to_vec(), std.to_vec())
}

/// Trains a flow of `config.arch` on the rows of `data`.
///
/// With `epochs = 0` the identity map is returned untouched: nothing is
/// fitted, not even the standardization.
pub fn train(data: ArrayView2<'_, f64>, config: &FlowConfig) -> Result<FlowModel> {
    config.validate()?;
    let (n, dim) = data.dim();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("training data contain non-finite values".into()));
    }
    if n < config.min_samples {
        return Err(Error::InvalidInput(format!(
            "flow training needs at least {} rows, got {n}",
            config.min_samples
        )));
    }
    if config.epochs == 0 {
        let mut m = FlowModel::identity(dim);
        m.config = config.clone();
        let nll = m.mean_nll(data)?;
        m.set_trace(TrainingTrace { seed: config.seed, train_nll: vec![], val_nll: vec![nll], best_epoch: 0 });
        return Ok(m);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_f10e);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * config.validation_fraction).round() as usize).clamp(1, n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val = data.select(Axis(0), val_idx);
    let train_rows = data.select(Axis(0), train_idx);

    let whitening = if config.whiten { Some(column_moments(train_rows.view())) } else { None };
    let mut model = FlowModel::build(dim, config, whitening.as_ref().map(|(m, s)| (m.as_slice(), s.as_slice())))?;

    let shapes: Vec<(usize, usize)> = model.params().iter().map(|p| p.dim()).collect();
    let mut adam = Adam::new(config.learning_rate, &shapes);
    let mut trace = TrainingTrace { seed: config.seed, ..Default::default() };
    trace.val_nll.push(model.mean_nll(val.view())?);
    let mut best: Option<(f64, Vec<Array2<f64>>)> = None;
    let mut since_best = 0;
    let mut idx: Vec<usize> = (0..train_rows.nrows()).collect();

    for epoch in 1..=config.epochs {
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in idx.chunks(config.batch_size) {
            let batch = train_rows.select(Axis(0), chunk);
            let (loss, grads) = nll_and_grad(&model, batch);
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence { epoch });
            }
            total += loss * chunk.len() as f64;
            let mut params = model.params_mut();
            adam.update(&mut params, &grads);
        }
        let train_nll = total / idx.len() as f64;
        let val_nll = model.mean_nll(val.view())?;
        if !val_nll.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        trace.train_nll.push(train_nll);
        trace.val_nll.push(val_nll);
        log::debug!("epoch {epoch}: train {train_nll:.5} val {val_nll:.5}");
        if best.as_ref().map_or(true, |(b, _)| val_nll < *b) {
            best = Some((val_nll, model.params().into_iter().cloned().collect()));
            trace.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        for (p, b) in model.params_mut().into_iter().zip(params) {
            *p = b;
        }
    }
    log::info!(
        "{} flow: best validation NLL {:.5} at epoch {}",
        config.arch.label(),
        trace.val_nll[trace.best_epoch],
        trace.best_epoch
    );
    model.set_trace(trace);
    Ok(model)
}

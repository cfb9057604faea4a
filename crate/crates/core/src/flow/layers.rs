//! Flow layers. Every layer is written in the normalizing direction
//! `S` (data → latent) on the tape, which is what maximum likelihood needs,
//! and in the generative direction `T` as plain array code.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::spline::{rq_inverse, RqSplineOp, SplineShape};
use super::tape::{Tape, Var};

/// Fully connected tanh network; the output layer starts at zero so that
/// every conditioner initially emits zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub(crate) weights: Vec<Array2<f64>>,
    pub(crate) biases: Vec<Array2<f64>>,
    pub(crate) masks: Option<Vec<Array2<f64>>>,
}

impl Mlp {
    pub fn new<R: Rng>(input: usize, hidden: &[usize], output: usize, masks: Option<Vec<Array2<f64>>>, rng: &mut R) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let depth = sizes.len() - 1;
        let mut weights = Vec::with_capacity(depth);
        let mut biases = Vec::with_capacity(depth);
        for l in 0..depth {
            let (fi, fo) = (sizes[l], sizes[l + 1]);
            let w = if l + 1 == depth || fi == 0 {
                Array2::zeros((fi, fo))
            } else {
                let a = (6.0 / (fi + fo) as f64).sqrt();
                let u = Uniform::new(-a, a).expect("finite bound");
                Array2::from_shape_fn((fi, fo), |_| u.sample(rng))
            };
            weights.push(w);
            biases.push(Array2::zeros((1, fo)));
        }
        if let Some(ms) = &masks {
            assert_eq!(ms.len(), depth);
            for (w, m) in weights.iter_mut().zip(ms) {
                *w *= m;
            }
        }
        Self { weights, biases, masks }
    }

    pub fn output_dim(&self) -> usize {
        self.biases.last().map(|b| b.ncols()).unwrap_or(0)
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| [w, b]).collect()
    }

    fn tape(&self, tape: &mut Tape, x: Var, pv: &[Var]) -> Var {
        let depth = self.weights.len();
        let mut h = x;
        for l in 0..depth {
            let mut w = pv[2 * l];
            if let Some(ms) = &self.masks {
                let m = tape.leaf(ms[l].clone());
                w = tape.mul(w, m);
            }
            h = tape.matmul(h, w);
            h = tape.add_row(h, pv[2 * l + 1]);
            if l + 1 < depth {
                h = tape.tanh(h);
            }
        }
        h
    }

    pub fn eval(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let depth = self.weights.len();
        let mut h = x.to_owned();
        for l in 0..depth {
            h = match &self.masks {
                Some(ms) => h.dot(&(&self.weights[l] * &ms[l])),
                None => h.dot(&self.weights[l]),
            };
            h += &self.biases[l];
            if l + 1 < depth {
                h.mapv_inplace(f64::tanh);
            }
        }
        h
    }
}

/// MADE masks for an autoregressive net on `m` inputs emitting `outputs_per_dim`
/// blocks of `m` outputs; output `i` of each block depends only on inputs `< i`.
pub fn made_masks(m: usize, hidden: &[usize], outputs_per_dim: usize) -> Vec<Array2<f64>> {
    let in_deg: Vec<usize> = (1..=m).collect();
    let hid_deg = |width: usize| -> Vec<usize> {
        if m == 1 {
            vec![0; width]
        } else {
            (0..width).map(|k| k % (m - 1) + 1).collect()
        }
    };
    let mut masks = Vec::new();
    let mut prev = in_deg;
    for &w in hidden {
        let cur = hid_deg(w);
        masks.push(Array2::from_shape_fn((prev.len(), w), |(i, j)| (cur[j] >= prev[i]) as u8 as f64));
        prev = cur;
    }
    let out_deg: Vec<usize> = (0..outputs_per_dim).flat_map(|_| 1..=m).collect();
    masks.push(Array2::from_shape_fn((prev.len(), out_deg.len()), |(i, j)| {
        (out_deg[j] > prev[i]) as u8 as f64
    }));
    masks
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `T: ξ = z·exp(log_scale) + shift`, per coordinate.
    AffineScalar { log_scale: Array2<f64>, shift: Array2<f64>, trainable: bool },
    /// `S: out[:, k] = in[:, perm[k]]`.
    Permutation { perm: Vec<usize> },
    /// `S: z_b = x_b − m(x_a)`, with `a` the first `split` coordinates.
    AdditiveCoupling { split: usize, net: Mlp },
    /// `S: z_b = RQS(x_b; θ(x_a))`.
    RqSplineCoupling { split: usize, shape: SplineShape, net: Mlp },
    /// `S: zᵢ = (xᵢ − μᵢ(x_{<i}))·exp(−αᵢ(x_{<i}))`.
    AffineAutoregressive { net: Mlp },
}

/// Output of the normalizing pass on the tape.
#[derive(Default)]
pub struct TapePass {
    /// Per-row log|det ∂S/∂x| contributions (`n × 1`), if any layer emits one.
    pub row_logdet: Option<Var>,
    /// Row-independent contributions (`1 × 1`).
    pub const_logdet: Option<Var>,
    /// Leaves for the trainable parameters, in [`Layer::params`] order.
    pub params: Vec<Var>,
}

fn add_opt(tape: &mut Tape, acc: Option<Var>, v: Var) -> Option<Var> {
    Some(match acc {
        Some(a) => tape.add(a, v),
        None => v,
    })
}

impl Layer {
    pub fn reversal(m: usize) -> Self {
        Layer::Permutation { perm: (0..m).rev().collect() }
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        match self {
            Layer::AffineScalar { log_scale, shift, trainable } => {
                if *trainable {
                    vec![log_scale, shift]
                } else {
                    vec![]
                }
            }
            Layer::Permutation { .. } => vec![],
            Layer::AdditiveCoupling { net, .. }
            | Layer::RqSplineCoupling { net, .. }
            | Layer::AffineAutoregressive { net } => net.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        match self {
            Layer::AffineScalar { log_scale, shift, trainable } => {
                if *trainable {
                    vec![log_scale, shift]
                } else {
                    vec![]
                }
            }
            Layer::Permutation { .. } => vec![],
            Layer::AdditiveCoupling { net, .. }
            | Layer::RqSplineCoupling { net, .. }
            | Layer::AffineAutoregressive { net } => net.params_mut(),
        }
    }

    /// Appends this layer's normalizing map to the tape.
    pub fn s_tape(&self, tape: &mut Tape, x: Var, pass: &mut TapePass) -> Var {
        let m = tape.value(x).ncols();
        match self {
            Layer::AffineScalar { log_scale, shift, trainable } => {
                let (ls, sh) = (tape.leaf(log_scale.clone()), tape.leaf(shift.clone()));
                if *trainable {
                    pass.params.push(ls);
                    pass.params.push(sh);
                }
                let nsh = tape.scale(sh, -1.0);
                let centred = tape.add_row(x, nsh);
                let nls = tape.scale(ls, -1.0);
                let inv = tape.exp(nls);
                let out = tape.mul_row(centred, inv);
                let ld = tape.sum_all(nls);
                pass.const_logdet = add_opt(tape, pass.const_logdet, ld);
                out
            }
            Layer::Permutation { perm } => tape.select_cols(x, perm),
            Layer::AdditiveCoupling { split, net } => {
                let pv = self.push_net_params(tape, net, pass);
                let xa = tape.slice_cols(x, 0, *split);
                let xb = tape.slice_cols(x, *split, m);
                let shift = net.tape(tape, xa, &pv);
                let zb = tape.sub(xb, shift);
                tape.concat_cols(&[xa, zb])
            }
            Layer::RqSplineCoupling { split, shape, net } => {
                let pv = self.push_net_params(tape, net, pass);
                let d = m - split;
                let xa = tape.slice_cols(x, 0, *split);
                let xb = tape.slice_cols(x, *split, m);
                let theta = net.tape(tape, xa, &pv);
                let o = tape.custom(Box::new(RqSplineOp { shape: *shape }), &[xb, theta]);
                let zb = tape.slice_cols(o, 0, d);
                let ld = tape.slice_cols(o, d, 2 * d);
                let ld = tape.sum_cols(ld);
                pass.row_logdet = add_opt(tape, pass.row_logdet, ld);
                tape.concat_cols(&[xa, zb])
            }
            Layer::AffineAutoregressive { net } => {
                let pv = self.push_net_params(tape, net, pass);
                let out = net.tape(tape, x, &pv);
                let mu = tape.slice_cols(out, 0, m);
                let alpha = tape.slice_cols(out, m, 2 * m);
                let diff = tape.sub(x, mu);
                let na = tape.scale(alpha, -1.0);
                let e = tape.exp(na);
                let z = tape.mul(diff, e);
                let ld = tape.sum_cols(na);
                pass.row_logdet = add_opt(tape, pass.row_logdet, ld);
                z
            }
        }
    }

    fn push_net_params(&self, tape: &mut Tape, net: &Mlp, pass: &mut TapePass) -> Vec<Var> {
        let pv: Vec<Var> = net.params().into_iter().map(|p| tape.leaf(p.clone())).collect();
        pass.params.extend_from_slice(&pv);
        pv
    }

    /// Generative map on a batch; `logdet` accumulates log|det ∂T/∂z| per row.
    pub fn t_plain(&self, z: &Array2<f64>, logdet: &mut Array1<f64>) -> Array2<f64> {
        let m = z.ncols();
        match self {
            Layer::AffineScalar { log_scale, shift, .. } => {
                let scale = log_scale.mapv(f64::exp);
                *logdet += log_scale.sum();
                z * &scale + shift
            }
            Layer::Permutation { perm } => {
                let mut out = Array2::zeros(z.dim());
                for (k, &p) in perm.iter().enumerate() {
                    out.column_mut(p).assign(&z.column(k));
                }
                out
            }
            Layer::AdditiveCoupling { split, net } => {
                let za = z.slice(s![.., ..*split]);
                let shift = net.eval(za);
                let mut out = z.clone();
                let mut xb = out.slice_mut(s![.., *split..]);
                xb += &shift;
                out
            }
            Layer::RqSplineCoupling { split, shape, net } => {
                let za = z.slice(s![.., ..*split]);
                let theta = net.eval(za);
                let q = shape.params_per_dim();
                let mut out = z.clone();
                for r in 0..z.nrows() {
                    let th = theta.row(r);
                    let th = th.as_slice().expect("contiguous");
                    for c in 0..m - split {
                        let (x, ld) = rq_inverse(z[[r, split + c]], &th[c * q..(c + 1) * q], *shape);
                        out[[r, split + c]] = x;
                        logdet[r] -= ld;
                    }
                }
                out
            }
            Layer::AffineAutoregressive { net } => {
                let mut x = Array2::zeros(z.dim());
                let mut alpha_last = Array2::zeros(z.dim());
                for i in 0..m {
                    let out = net.eval(x.view());
                    for r in 0..z.nrows() {
                        let (mu, al) = (out[[r, i]], out[[r, m + i]]);
                        x[[r, i]] = z[[r, i]] * al.exp() + mu;
                        alpha_last[[r, i]] = al;
                    }
                }
                *logdet += &alpha_last.sum_axis(Axis(1));
                x
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn made_masks_are_autoregressive() {
        for m in 1..=4 {
            let masks = made_masks(m, &[7, 5], 2);
            // connectivity = product of masks; output i depends on input j only if j < i
            let mut conn = masks[0].clone();
            for mk in &masks[1..] {
                conn = conn.dot(mk);
            }
            for j in 0..m {
                for o in 0..2 * m {
                    let i = o % m;
                    if j >= i {
                        assert_eq!(conn[[j, o]], 0.0, "m={m} in {j} out {o}");
                    }
                }
            }
        }
    }

    #[test]
    fn zero_init_mlp_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(2, &[8, 8], 3, None, &mut rng);
        let x = ndarray::array![[0.3, -1.0], [2.0, 0.5]];
        assert!(net.eval(x.view()).iter().all(|v| *v == 0.0));
        assert!(net.weights[0].iter().any(|v| *v != 0.0));
    }
}

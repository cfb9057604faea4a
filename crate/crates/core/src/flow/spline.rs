//! Monotone rational-quadratic splines on `[−B, B]` with identity tails.
//!
//! Each transformed coordinate uses `3K − 1` raw parameters: `K` width
//! logits, `K` height logits and `K − 1` interior derivative pre-activations.
//! Boundary derivatives are fixed at 1 so the spline joins the linear tails
//! with C¹ continuity. With all raw parameters zero the spline is the identity.

use ndarray::Array2;

use super::tape::CustomOp;

pub const MIN_BIN_WIDTH: f64 = 1e-3;
pub const MIN_BIN_HEIGHT: f64 = 1e-3;
pub const MIN_DERIVATIVE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineShape {
    pub bins: usize,
    pub bound: f64,
}

impl SplineShape {
    pub fn params_per_dim(&self) -> usize {
        3 * self.bins - 1
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn derivative_offset() -> f64 {
    // softplus(offset) = 1 − MIN_DERIVATIVE, so zero input gives derivative 1
    ((1.0 - MIN_DERIVATIVE).exp() - 1.0).ln()
}

/// Knot positions, knot values and knot derivatives decoded from raw parameters.
struct Knots {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
    // softmax outputs, kept for the backward pass
    sw: Vec<f64>,
    sh: Vec<f64>,
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn decode(theta: &[f64], shape: SplineShape) -> Knots {
    let k = shape.bins;
    let b = shape.bound;
    let sw = softmax(&theta[..k]);
    let sh = softmax(&theta[k..2 * k]);
    let mut xs = Vec::with_capacity(k + 1);
    let mut ys = Vec::with_capacity(k + 1);
    xs.push(-b);
    ys.push(-b);
    for j in 0..k {
        let w = MIN_BIN_WIDTH + (1.0 - k as f64 * MIN_BIN_WIDTH) * sw[j];
        let h = MIN_BIN_HEIGHT + (1.0 - k as f64 * MIN_BIN_HEIGHT) * sh[j];
        xs.push(xs[j] + 2.0 * b * w);
        ys.push(ys[j] + 2.0 * b * h);
    }
    xs[k] = b;
    ys[k] = b;
    let off = derivative_offset();
    let mut ds = vec![1.0; k + 1];
    for i in 1..k {
        ds[i] = MIN_DERIVATIVE + softplus(theta[2 * k + i - 1] + off);
    }
    Knots { xs, ys, ds, sw, sh }
}

fn locate(knots: &[f64], v: f64) -> usize {
    let k = knots.len() - 1;
    knots[1..k].partition_point(|x| *x <= v)
}

// Forward-mode dual over the 7 local inputs (x, X, w, Y, h, d0, d1).
#[derive(Clone, Copy)]
struct D {
    v: f64,
    g: [f64; 7],
}

impl D {
    fn var(v: f64, i: usize) -> D {
        let mut g = [0.0; 7];
        g[i] = 1.0;
        D { v, g }
    }
    fn c(v: f64) -> D {
        D { v, g: [0.0; 7] }
    }
    fn ln(self) -> D {
        let mut g = self.g;
        for x in &mut g {
            *x /= self.v;
        }
        D { v: self.v.ln(), g }
    }
}

impl std::ops::Add for D {
    type Output = D;
    fn add(self, o: D) -> D {
        let mut g = self.g;
        for i in 0..7 {
            g[i] += o.g[i];
        }
        D { v: self.v + o.v, g }
    }
}

impl std::ops::Sub for D {
    type Output = D;
    fn sub(self, o: D) -> D {
        let mut g = self.g;
        for i in 0..7 {
            g[i] -= o.g[i];
        }
        D { v: self.v - o.v, g }
    }
}

impl std::ops::Mul for D {
    type Output = D;
    fn mul(self, o: D) -> D {
        let mut g = [0.0; 7];
        for i in 0..7 {
            g[i] = self.g[i] * o.v + self.v * o.g[i];
        }
        D { v: self.v * o.v, g }
    }
}

impl std::ops::Div for D {
    type Output = D;
    fn div(self, o: D) -> D {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        let mut g = [0.0; 7];
        for i in 0..7 {
            g[i] = (self.g[i] - q * o.g[i]) * inv;
        }
        D { v: q, g }
    }
}

fn rq_segment(x: D, xk: D, w: D, yk: D, h: D, d0: D, d1: D) -> (D, D) {
    let s = h / w;
    let xi = (x - xk) / w;
    let one = D::c(1.0);
    let t = xi * (one - xi);
    let num = h * (s * xi * xi + d0 * t);
    let den = s + (d1 + d0 - D::c(2.0) * s) * t;
    let y = yk + num / den;
    let omx = one - xi;
    let dnum = d1 * xi * xi + D::c(2.0) * s * t + d0 * omx * omx;
    let ld = D::c(2.0) * s.ln() + dnum.ln() - D::c(2.0) * den.ln();
    (y, ld)
}

/// Spline value and log-derivative at `x`.
pub fn rq_forward(x: f64, theta: &[f64], shape: SplineShape) -> (f64, f64) {
    if !(x > -shape.bound && x < shape.bound) {
        return (x, 0.0);
    }
    let kn = decode(theta, shape);
    let k = locate(&kn.xs, x);
    let (y, ld) = rq_segment(
        D::c(x),
        D::c(kn.xs[k]),
        D::c(kn.xs[k + 1] - kn.xs[k]),
        D::c(kn.ys[k]),
        D::c(kn.ys[k + 1] - kn.ys[k]),
        D::c(kn.ds[k]),
        D::c(kn.ds[k + 1]),
    );
    (y.v, ld.v)
}

/// Inverse spline: returns `x` and the log-derivative `log dy/dx` at that `x`.
pub fn rq_inverse(y: f64, theta: &[f64], shape: SplineShape) -> (f64, f64) {
    if !(y > -shape.bound && y < shape.bound) {
        return (y, 0.0);
    }
    let kn = decode(theta, shape);
    let k = locate(&kn.ys, y);
    let (xk, w) = (kn.xs[k], kn.xs[k + 1] - kn.xs[k]);
    let (yk, h) = (kn.ys[k], kn.ys[k + 1] - kn.ys[k]);
    let (d0, d1) = (kn.ds[k], kn.ds[k + 1]);
    let s = h / w;
    let dy = y - yk;
    let a = h * (s - d0) + dy * (d1 + d0 - 2.0 * s);
    let b = h * d0 - dy * (d1 + d0 - 2.0 * s);
    let c = -s * dy;
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let xi = (2.0 * c / (-b - disc.sqrt())).clamp(0.0, 1.0);
    let x = xk + xi * w;
    let t = xi * (1.0 - xi);
    let den = s + (d1 + d0 - 2.0 * s) * t;
    let dnum = d1 * xi * xi + 2.0 * s * t + d0 * (1.0 - xi) * (1.0 - xi);
    let ld = 2.0 * s.ln() + dnum.ln() - 2.0 * den.ln();
    (x, ld)
}

/// Accumulates `∂L/∂x` and `∂L/∂θ` for one element given upstream `g_y`, `g_ld`.
fn rq_backward(x: f64, theta: &[f64], shape: SplineShape, g_y: f64, g_ld: f64, g_theta: &mut [f64]) -> f64 {
    if !(x > -shape.bound && x < shape.bound) {
        return g_y;
    }
    let nb = shape.bins;
    let b = shape.bound;
    let kn = decode(theta, shape);
    let k = locate(&kn.xs, x);
    let (y, ld) = rq_segment(
        D::var(x, 0),
        D::var(kn.xs[k], 1),
        D::var(kn.xs[k + 1] - kn.xs[k], 2),
        D::var(kn.ys[k], 3),
        D::var(kn.ys[k + 1] - kn.ys[k], 4),
        D::var(kn.ds[k], 5),
        D::var(kn.ds[k + 1], 6),
    );
    let mut gl = [0.0; 7];
    for i in 0..7 {
        gl[i] = g_y * y.g[i] + g_ld * ld.g[i];
    }
    // widths: X_k = −B + 2B Σ_{j<k} W_j and w_k = 2B W_k
    let mut gw = vec![0.0; nb];
    let mut gh = vec![0.0; nb];
    for j in 0..nb {
        if j < k {
            gw[j] += 2.0 * b * gl[1];
            gh[j] += 2.0 * b * gl[3];
        }
    }
    // the last bin's width is B − X_{K−1}, not 2B·W_{K−1}
    if k + 1 == nb {
        for j in 0..nb - 1 {
            gw[j] -= 2.0 * b * gl[2];
            gh[j] -= 2.0 * b * gl[4];
        }
    } else {
        gw[k] += 2.0 * b * gl[2];
        gh[k] += 2.0 * b * gl[4];
    }
    let fw = 1.0 - nb as f64 * MIN_BIN_WIDTH;
    let fh = 1.0 - nb as f64 * MIN_BIN_HEIGHT;
    let dot_w: f64 = (0..nb).map(|j| kn.sw[j] * gw[j]).sum();
    let dot_h: f64 = (0..nb).map(|j| kn.sh[j] * gh[j]).sum();
    for j in 0..nb {
        g_theta[j] += fw * kn.sw[j] * (gw[j] - dot_w);
        g_theta[nb + j] += fh * kn.sh[j] * (gh[j] - dot_h);
    }
    let off = derivative_offset();
    if k >= 1 {
        g_theta[2 * nb + k - 1] += gl[5] * sigmoid(theta[2 * nb + k - 1] + off);
    }
    if k + 1 <= nb - 1 {
        g_theta[2 * nb + k] += gl[6] * sigmoid(theta[2 * nb + k] + off);
    }
    gl[0]
}

/// Tape op: inputs `x` (`n × d`) and raw parameters (`n × d(3K−1)`), output
/// `n × 2d` holding spline values then log-derivatives.
pub struct RqSplineOp {
    pub shape: SplineShape,
}

impl CustomOp for RqSplineOp {
    fn forward(&self, inputs: &[&Array2<f64>]) -> Array2<f64> {
        let (x, p) = (inputs[0], inputs[1]);
        let (n, d) = x.dim();
        let q = self.shape.params_per_dim();
        let mut out = Array2::zeros((n, 2 * d));
        for r in 0..n {
            let prow = p.row(r);
            let prow = prow.as_slice().expect("contiguous parameters");
            for c in 0..d {
                let (y, ld) = rq_forward(x[[r, c]], &prow[c * q..(c + 1) * q], self.shape);
                out[[r, c]] = y;
                out[[r, d + c]] = ld;
            }
        }
        out
    }

    fn backward(&self, inputs: &[&Array2<f64>], _output: &Array2<f64>, grad: &Array2<f64>) -> Vec<Array2<f64>> {
        let (x, p) = (inputs[0], inputs[1]);
        let (n, d) = x.dim();
        let q = self.shape.params_per_dim();
        let mut gx = Array2::zeros((n, d));
        let mut gp = Array2::zeros(p.dim());
        for r in 0..n {
            let prow = p.row(r);
            let prow = prow.as_slice().expect("contiguous parameters");
            for c in 0..d {
                let mut gt = gp.row_mut(r);
                let gts = gt.as_slice_mut().expect("contiguous");
                gx[[r, c]] = rq_backward(
                    x[[r, c]],
                    &prow[c * q..(c + 1) * q],
                    self.shape,
                    grad[[r, c]],
                    grad[[r, d + c]],
                    &mut gts[c * q..(c + 1) * q],
                );
            }
        }
        vec![gx, gp]
    }
}

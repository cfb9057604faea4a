//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! Every node holds an `Array2<f64>`; row vectors (`1 × k`) broadcast over
//! rows in [`Tape::add_row`] and [`Tape::mul_row`]. Operations that are awkward
//! to express elementwise plug in through [`CustomOp`].

use ndarray::{Array2, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// A fused operation with a hand-written backward pass.
pub trait CustomOp {
    fn forward(&self, inputs: &[&Array2<f64>]) -> Array2<f64>;

    /// Gradients for each input given the output gradient.
    fn backward(&self, inputs: &[&Array2<f64>], output: &Array2<f64>, grad: &Array2<f64>) -> Vec<Array2<f64>>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Scale(Var, f64),
    SumAll(Var),
    SumCols(Var),
    SelectCols(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    Custom(Box<dyn CustomOp>, Vec<Var>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients from one reverse sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient or zeros of the leaf's shape.
    pub fn take_or_zeros(&mut self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.grads[v.0].take().unwrap_or_else(|| Array2::zeros(shape))
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a + b` with `b` a `1 × k` row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::AddRow(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::MulRow(a, b))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(a))
    }

    /// Row sums as an `n × 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumCols(a))
    }

    pub fn select_cols(&mut self, a: Var, cols: &[usize]) -> Var {
        let v = self.value(a).select(Axis(1), cols);
        self.push(v, Op::SelectCols(a, cols.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let cols: Vec<usize> = (start..end).collect();
        self.select_cols(a, &cols)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var]) -> Var {
        let vals: Vec<&Array2<f64>> = inputs.iter().map(|v| self.value(*v)).collect();
        let out = op.forward(&vals);
        self.push(out, Op::Custom(op, inputs.to_vec()))
    }

    /// Reverse sweep from a `1 × 1` output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Array2::ones((1, 1)));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::AddRow(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gb = if self.value(*b).ncols() == 1 && gb.ncols() != 1 {
                        Array2::from_elem((1, 1), gb.sum())
                    } else {
                        gb
                    };
                    accumulate(&mut grads[a.0], g);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], -g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::MulRow(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    ndarray::Zip::from(&mut ga).and(&node.value).for_each(|g, &y| *g *= 1.0 - y * y);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Exp(a) => {
                    let ga = g * &node.value;
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Square(a) => {
                    let ga = g * self.value(*a) * 2.0;
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Scale(a, c) => accumulate(&mut grads[a.0], g * *c),
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::SumCols(a) => {
                    let ga = g.broadcast(self.value(*a).dim()).expect("column broadcast").to_owned();
                    accumulate(&mut grads[a.0], ga);
                }
                Op::SelectCols(a, cols) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    for (k, &c) in cols.iter().enumerate() {
                        let mut col = ga.column_mut(c);
                        col += &g.column(k);
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        let gp = g.slice(ndarray::s![.., start..start + w]).to_owned();
                        accumulate(&mut grads[p.0], gp);
                        start += w;
                    }
                }
                Op::Custom(op, inputs) => {
                    let vals: Vec<&Array2<f64>> = inputs.iter().map(|v| self.value(*v)).collect();
                    let gs = op.backward(&vals, &node.value, &g);
                    for (v, gi) in inputs.iter().zip(gs) {
                        accumulate(&mut grads[v.0], gi);
                    }
                }
            }
        }
        Gradients { grads }
    }
}

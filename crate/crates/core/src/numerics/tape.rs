//! Reverse-mode differentiation over [`Array`] values.
//!
//! Operations are appended to a [`Tape`] as they are evaluated; `backward`
//! walks the record in reverse and accumulates adjoints. The tape is not
//! consumed, so the same record can be differentiated repeatedly.

use super::{discretized_logistic_log_mass, Array, Real};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Transpose(Var),
    AddRow(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    Gather(Var, Vec<usize>),
    SliceLast(Var, usize),
    SumLast(Var),
    Sum(Var),
    Reshape(Var),
    DiscLogistic {
        means: Var,
        log_scales: Var,
        targets: Vec<usize>,
        levels: usize,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Array<T>,
    op: Op<T>,
}

#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    adjoints: Vec<Option<Array<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a leaf `v`; exactly zero when `v` does not
    /// reach the loss.
    pub fn wrt(&self, v: Var) -> Array<T> {
        match &self.adjoints[v.0] {
            Some(a) => a.clone(),
            None => Array::zeros(&self.shapes[v.0]),
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Record an input (parameter or constant).
    pub fn leaf(&mut self, value: Array<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let v = self.value(a).scale(c)?;
        Ok(self.push(v, Op::Scale(a, c)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        Ok(self.push(v, Op::Transpose(a)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let v = self.value(a).add_row(self.value(row))?;
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).tanh()?;
        Ok(self.push(v, Op::Tanh(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).sigmoid()?;
        Ok(self.push(v, Op::Sigmoid(a)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).exp()?;
        Ok(self.push(v, Op::Exp(a)))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).log()?;
        Ok(self.push(v, Op::Log(a)))
    }

    pub fn softmax_last(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).softmax_last()?;
        Ok(self.push(v, Op::Softmax(a)))
    }

    pub fn log_softmax_last(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).log_softmax_last()?;
        Ok(self.push(v, Op::LogSoftmax(a)))
    }

    pub fn logsumexp_last(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).logsumexp_last()?;
        Ok(self.push(v, Op::LogSumExp(a)))
    }

    pub fn gather_last(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        let v = self.value(a).gather_last(&index)?;
        Ok(self.push(v, Op::Gather(a, index)))
    }

    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(a).slice_last(start, len)?;
        Ok(self.push(v, Op::SliceLast(a, start)))
    }

    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).sum_last()?;
        Ok(self.push(v, Op::SumLast(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Element-wise discretized-logistic log mass. `means` and `log_scales`
    /// are `n × M`; `targets[r]` is the level scored for every column of row `r`.
    pub fn discretized_logistic(
        &mut self,
        means: Var,
        log_scales: Var,
        targets: Vec<usize>,
        levels: usize,
    ) -> Result<Var> {
        let (m, s) = (self.value(means), self.value(log_scales));
        let shape_err = || Error::Shape {
            op: "discretized_logistic",
            left: m.shape().to_vec(),
            right: s.shape().to_vec(),
        };
        if m.shape() != s.shape() {
            return Err(shape_err());
        }
        let (rows, cols) = m.dims2().ok_or_else(shape_err)?;
        if targets.len() != rows || targets.iter().any(|&k| k >= levels) {
            return Err(shape_err());
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                out.push(
                    discretized_logistic_log_mass(m.data()[i], s.data()[i], targets[r], levels)
                        .value,
                );
            }
        }
        let v = Array::new(m.shape().to_vec(), out)?;
        Ok(self.push(
            v,
            Op::DiscLogistic {
                means,
                log_scales,
                targets,
                levels,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let n = loss.0 + 1;
        let mut adj: Vec<Option<Array<T>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Array::full(shape, T::one()));

        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    // Leaves keep their adjoint for the caller.
                    adj[i] = Some(g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone())?;
                    accumulate(&mut adj, *b, g.clone())?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *a, g.clone())?;
                    accumulate(&mut adj, *b, g.scale(-T::one())?)?;
                }
                Op::Mul(a, b) => {
                    accumulate(&mut adj, *a, g.mul(self.value(*b))?)?;
                    accumulate(&mut adj, *b, g.mul(self.value(*a))?)?;
                }
                Op::Scale(a, c) => accumulate(&mut adj, *a, g.scale(*c)?)?,
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate(&mut adj, *a, g.matmul(&bv.transpose()?)?)?;
                    accumulate(&mut adj, *b, av.transpose()?.matmul(&g)?)?;
                }
                Op::Transpose(a) => accumulate(&mut adj, *a, g.transpose()?)?,
                Op::AddRow(a, row) => {
                    let m = self.value(*row).len();
                    let mut col = vec![T::zero(); m];
                    for (k, &x) in g.data().iter().enumerate() {
                        col[k % m] = col[k % m] + x;
                    }
                    accumulate(&mut adj, *row, Array::from_parts(vec![m], col))?;
                    accumulate(&mut adj, *a, g)?;
                }
                Op::Tanh(a) => {
                    let d = zip_with(&g, y, |g, y| g * (T::one() - y * y));
                    accumulate(&mut adj, *a, d)?;
                }
                Op::Sigmoid(a) => {
                    let d = zip_with(&g, y, |g, y| g * y * (T::one() - y));
                    accumulate(&mut adj, *a, d)?;
                }
                Op::Exp(a) => accumulate(&mut adj, *a, g.mul(y)?)?,
                Op::Log(a) => {
                    let d = zip_with(&g, self.value(*a), |g, x| g / x);
                    accumulate(&mut adj, *a, d)?;
                }
                Op::Softmax(a) => {
                    let cols = *y.shape().last().unwrap();
                    let mut d = Vec::with_capacity(y.len());
                    for (gr, yr) in g.data().chunks(cols).zip(y.data().chunks(cols)) {
                        let dot = gr.iter().zip(yr).fold(T::zero(), |s, (&g, &y)| s + g * y);
                        d.extend(gr.iter().zip(yr).map(|(&g, &y)| y * (g - dot)));
                    }
                    accumulate(&mut adj, *a, Array::from_parts(y.shape().to_vec(), d))?;
                }
                Op::LogSoftmax(a) => {
                    let cols = *y.shape().last().unwrap();
                    let mut d = Vec::with_capacity(y.len());
                    for (gr, yr) in g.data().chunks(cols).zip(y.data().chunks(cols)) {
                        let total = gr.iter().fold(T::zero(), |s, &g| s + g);
                        d.extend(gr.iter().zip(yr).map(|(&g, &y)| g - y.exp() * total));
                    }
                    accumulate(&mut adj, *a, Array::from_parts(y.shape().to_vec(), d))?;
                }
                Op::LogSumExp(a) => {
                    let x = self.value(*a);
                    let cols = *x.shape().last().unwrap();
                    let mut d = Vec::with_capacity(x.len());
                    for (r, xr) in x.data().chunks(cols).enumerate() {
                        let (gr, lse) = (g.data()[r], y.data()[r]);
                        d.extend(xr.iter().map(|&x| gr * (x - lse).exp()));
                    }
                    accumulate(&mut adj, *a, Array::from_parts(x.shape().to_vec(), d))?;
                }
                Op::Gather(a, index) => {
                    let x = self.value(*a);
                    let cols = *x.shape().last().unwrap();
                    let mut d = vec![T::zero(); x.len()];
                    for (r, &k) in index.iter().enumerate() {
                        d[r * cols + k] = g.data()[r];
                    }
                    accumulate(&mut adj, *a, Array::from_parts(x.shape().to_vec(), d))?;
                }
                Op::SliceLast(a, start) => {
                    let x = self.value(*a);
                    let cols = *x.shape().last().unwrap();
                    let len = *y.shape().last().unwrap();
                    let mut d = vec![T::zero(); x.len()];
                    for (r, gr) in g.data().chunks(len).enumerate() {
                        d[r * cols + start..r * cols + start + len].copy_from_slice(gr);
                    }
                    accumulate(&mut adj, *a, Array::from_parts(x.shape().to_vec(), d))?;
                }
                Op::SumLast(a) => {
                    let x = self.value(*a);
                    let cols = *x.shape().last().unwrap();
                    let d = (0..x.len()).map(|k| g.data()[k / cols]).collect();
                    accumulate(&mut adj, *a, Array::from_parts(x.shape().to_vec(), d))?;
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    let gv = g.data()[0];
                    accumulate(&mut adj, *a, Array::full(x.shape(), gv))?;
                }
                Op::Reshape(a) => {
                    let d = g.reshape(self.value(*a).shape())?;
                    accumulate(&mut adj, *a, d)?;
                }
                Op::DiscLogistic {
                    means,
                    log_scales,
                    targets,
                    levels,
                } => {
                    let (m, s) = (self.value(*means), self.value(*log_scales));
                    let cols = *m.shape().last().unwrap();
                    let mut dm = Vec::with_capacity(m.len());
                    let mut ds = Vec::with_capacity(m.len());
                    for i in 0..m.len() {
                        let lm = discretized_logistic_log_mass(
                            m.data()[i],
                            s.data()[i],
                            targets[i / cols],
                            *levels,
                        );
                        dm.push(g.data()[i] * lm.d_mean);
                        ds.push(g.data()[i] * lm.d_log_scale);
                    }
                    accumulate(&mut adj, *means, Array::from_parts(m.shape().to_vec(), dm))?;
                    accumulate(
                        &mut adj,
                        *log_scales,
                        Array::from_parts(s.shape().to_vec(), ds),
                    )?;
                }
            }
        }

        Ok(Gradients {
            adjoints: adj,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }
}

fn zip_with<T: Real>(a: &Array<T>, b: &Array<T>, f: impl Fn(T, T) -> T) -> Array<T> {
    let d = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Array::from_parts(a.shape().to_vec(), d)
}

fn accumulate<T: Real>(adj: &mut [Option<Array<T>>], v: Var, g: Array<T>) -> Result<()> {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

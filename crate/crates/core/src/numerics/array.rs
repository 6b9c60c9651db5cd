use super::Real;
use crate::error::{Error, Result};

/// Dense row-major array. Rank 0 (scalar), 1 (vector) and 2 (matrix) are
/// the only ranks the network needs; element-wise ops accept any rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Array<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn finite_or<T: Real>(op: &'static str, data: Vec<T>) -> Result<Vec<T>> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(data)
    } else {
        Err(Error::NonFinite(op))
    }
}

impl<T: Real> Array<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "new",
                left: shape,
                right: vec![data.len()],
            });
        }
        let data = finite_or("new", data)?;
        Ok(Self { shape, data })
    }

    /// Construct without the finiteness scan; callers guarantee the invariant.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![], vec![value])
    }

    pub fn vector(data: Vec<T>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The value of a one-element array.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// (rows, cols) of a matrix; vectors are treated as a single row.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Some((*r, *c)),
            [c] => Some((1, *c)),
            _ => None,
        }
    }

    fn last_axis(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [] => Err(Error::Shape {
                op,
                left: vec![],
                right: vec![],
            }),
            s => {
                let cols = s[s.len() - 1];
                let rows = if cols == 0 { 0 } else { self.data.len() / cols };
                Ok((rows, cols))
            }
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                left: self.shape.clone(),
                right: shape.to_vec(),
            });
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn map(&self, op: &'static str, f: impl Fn(T) -> T) -> Result<Self> {
        let data = finite_or(op, self.data.iter().map(|&x| f(x)).collect())?;
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    fn zip(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_parts(self.shape.clone(), finite_or(op, data)?))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Result<Self> {
        self.map("scale", |x| x * c)
    }

    /// In-place `self += other`, used for gradient accumulation.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op: "add_assign",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let err = || Error::Shape {
            op: "matmul",
            left: self.shape.clone(),
            right: other.shape.clone(),
        };
        let ([n, k], [k2, m]) = (self.shape.as_slice(), other.shape.as_slice()) else {
            return Err(err());
        };
        let (n, k, m) = (*n, *k, *m);
        if k != *k2 {
            return Err(err());
        }
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let b = &other.data[p * m..(p + 1) * m];
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o = *o + a * bv;
                }
            }
        }
        Ok(Self::from_parts(vec![n, m], finite_or("matmul", out)?))
    }

    pub fn transpose(&self) -> Result<Self> {
        let [n, m] = self.shape.as_slice() else {
            return Err(Error::Shape {
                op: "transpose",
                left: self.shape.clone(),
                right: vec![],
            });
        };
        let (n, m) = (*n, *m);
        let mut out = Vec::with_capacity(n * m);
        for j in 0..m {
            for i in 0..n {
                out.push(self.data[i * m + j]);
            }
        }
        Ok(Self::from_parts(vec![m, n], out))
    }

    /// Add a length-`m` row vector to every row of an `n × m` matrix.
    pub fn add_row(&self, row: &Self) -> Result<Self> {
        let (_, m) = self.last_axis("add_row")?;
        if row.shape != [m] {
            return Err(Error::Shape {
                op: "add_row",
                left: self.shape.clone(),
                right: row.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| x + row.data[i % m])
            .collect();
        Ok(Self::from_parts(
            self.shape.clone(),
            finite_or("add_row", data)?,
        ))
    }

    pub fn exp(&self) -> Result<Self> {
        self.map("exp", |x| x.exp())
    }

    pub fn log(&self) -> Result<Self> {
        self.map("log", |x| x.ln())
    }

    pub fn tanh(&self) -> Result<Self> {
        self.map("tanh", |x| x.tanh())
    }

    pub fn sigmoid(&self) -> Result<Self> {
        self.map("sigmoid", super::sigmoid)
    }

    /// Row-wise log-sum-exp over the last axis; output drops that axis.
    pub fn logsumexp_last(&self) -> Result<Self> {
        let (rows, cols) = self.last_axis("logsumexp_last")?;
        let out = (0..rows)
            .map(|r| super::logsumexp(&self.data[r * cols..(r + 1) * cols]))
            .collect();
        let shape = self.shape[..self.shape.len() - 1].to_vec();
        Ok(Self::from_parts(shape, finite_or("logsumexp_last", out)?))
    }

    pub fn log_softmax_last(&self) -> Result<Self> {
        let (rows, cols) = self.last_axis("log_softmax_last")?;
        let mut out = Vec::with_capacity(self.data.len());
        for r in 0..rows {
            let row = &self.data[r * cols..(r + 1) * cols];
            let lse = super::logsumexp(row);
            out.extend(row.iter().map(|&x| x - lse));
        }
        Ok(Self::from_parts(
            self.shape.clone(),
            finite_or("log_softmax_last", out)?,
        ))
    }

    pub fn softmax_last(&self) -> Result<Self> {
        let (rows, cols) = self.last_axis("softmax_last")?;
        let mut out = Vec::with_capacity(self.data.len());
        for r in 0..rows {
            let row = &self.data[r * cols..(r + 1) * cols];
            let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let start = out.len();
            let mut total = T::zero();
            for &x in row {
                let e = (x - max).exp();
                total = total + e;
                out.push(e);
            }
            for v in &mut out[start..] {
                *v = *v / total;
            }
        }
        Ok(Self::from_parts(
            self.shape.clone(),
            finite_or("softmax_last", out)?,
        ))
    }

    /// Pick one element per row of the last axis.
    pub fn gather_last(&self, index: &[usize]) -> Result<Self> {
        let (rows, cols) = self.last_axis("gather_last")?;
        if index.len() != rows || index.iter().any(|&i| i >= cols) {
            return Err(Error::Shape {
                op: "gather_last",
                left: self.shape.clone(),
                right: vec![index.len()],
            });
        }
        let out = index
            .iter()
            .enumerate()
            .map(|(r, &i)| self.data[r * cols + i])
            .collect();
        let shape = self.shape[..self.shape.len() - 1].to_vec();
        Ok(Self::from_parts(shape, out))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Self> {
        let (rows, cols) = self.last_axis("slice_last")?;
        if start + len > cols {
            return Err(Error::Shape {
                op: "slice_last",
                left: self.shape.clone(),
                right: vec![start, len],
            });
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&self.data[r * cols + start..r * cols + start + len]);
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = len;
        Ok(Self::from_parts(shape, out))
    }

    pub fn sum_last(&self) -> Result<Self> {
        let (rows, cols) = self.last_axis("sum_last")?;
        let out = (0..rows)
            .map(|r| {
                self.data[r * cols..(r + 1) * cols]
                    .iter()
                    .fold(T::zero(), |a, &b| a + b)
            })
            .collect();
        let shape = self.shape[..self.shape.len() - 1].to_vec();
        Ok(Self::from_parts(shape, finite_or("sum_last", out)?))
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &b| a + b)
    }
}

//! Dense arrays, a reverse-mode tape, and Adam.
//!
//! Everything here is generic over [`Real`], so the same code runs on `f32`
//! and `f64`. The rest of the crate instantiates it at `f64`.

mod adam;
mod array;
mod logistic;
mod tape;

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

pub use adam::{AdamConfig, AdamState};
pub use array::Array;
pub use logistic::{discretized_logistic_log_mass, log_sigmoid, LogMass};
pub use tape::{Gradients, Tape, Var};

/// Scalar types the numerics can run on.
pub trait Real: Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static {
    /// Convert an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }
}

impl<T> Real for T where T: Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn logsumexp<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    if max == T::neg_infinity() {
        return max;
    }
    let total = xs.iter().fold(T::zero(), |a, &x| a + (x - max).exp());
    max + total.ln()
}

/// An ordered set of named parameter arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<(String, Array<T>)>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array<T>) {
        self.entries.push((name.into(), value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn arrays(&self) -> impl Iterator<Item = &Array<T>> {
        self.entries.iter().map(|(_, a)| a)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array<T>)> {
        self.entries.iter().map(|(n, a)| (n.as_str(), a))
    }

    pub fn get(&self, name: &str) -> Option<&Array<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array<T>> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
    }

    pub fn by_index(&self, i: usize) -> &Array<T> {
        &self.entries[i].1
    }

    pub(crate) fn by_index_mut(&mut self, i: usize) -> (&str, &mut Array<T>) {
        let (n, a) = &mut self.entries[i];
        (n.as_str(), a)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, a)| a.len()).sum()
    }
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

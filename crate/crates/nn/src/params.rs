//! Named parameter tensors and their gradients.

use serde::{Deserialize, Serialize};

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    /// `[rows, cols]`; biases are `[1, n]`.
    pub shape: [usize; 2],
    pub data: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    pub tensors: Vec<ParamTensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self { tensors: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: [usize; 2], data: Vec<T>) -> ParamId {
        assert_eq!(data.len(), shape[0] * shape[1], "parameter data does not match its shape");
        self.tensors.push(ParamTensor { name: name.into(), shape, data });
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor<T> {
        &self.tensors[id.0]
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Gradients<T> {
        Gradients { grads: self.tensors.iter().map(|t| vec![T::zero(); t.data.len()]).collect() }
    }

    /// Element-wise precision conversion.
    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor { name: t.name.clone(), shape: t.shape, data: t.data.iter().map(|x| U::of(x.f64())).collect() })
                .collect(),
        }
    }

    /// Flat view in tensor order, for finite differences.
    pub fn flat_len(&self) -> usize {
        self.count()
    }

    pub fn flat_get(&self, mut i: usize) -> T {
        for t in &self.tensors {
            if i < t.data.len() {
                return t.data[i];
            }
            i -= t.data.len();
        }
        panic!("flat parameter index out of range")
    }

    pub fn flat_set(&mut self, mut i: usize, v: T) {
        for t in &mut self.tensors {
            if i < t.data.len() {
                t.data[i] = v;
                return;
            }
            i -= t.data.len();
        }
        panic!("flat parameter index out of range")
    }
}

/// One gradient buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub grads: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn sum_squares(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g.f64() * g.f64()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.sum_squares().sqrt()
    }

    pub fn scale(&mut self, k: T) {
        self.grads.iter_mut().flatten().for_each(|g| *g = *g * k);
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + *y;
            }
        }
    }

    pub fn flat_get(&self, mut i: usize) -> T {
        for g in &self.grads {
            if i < g.len() {
                return g[i];
            }
            i -= g.len();
        }
        panic!("flat gradient index out of range")
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }
}

/// Scales every gradient set jointly so that their combined L2 norm is at
/// most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(sets: &mut [&mut Gradients<T>], max_norm: f64) -> f64 {
    let norm = sets.iter().map(|g| g.sum_squares()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = T::of(max_norm / norm);
        for g in sets.iter_mut() {
            g.scale(k);
        }
    }
    norm
}

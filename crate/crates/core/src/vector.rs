//! Dense helpers and the sparse message type.
//!
//! Model iterates are plain `Vec<f64>` / `&[f64]`. Everything that crosses
//! the simulated network is a [`SparseVector`]; its stored-coordinate count
//! is the unit of communication cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sorted `(index, value)` pairs over an ambient dimension.
///
/// Stored entries may hold the value zero; they still count towards
/// [`SparseVector::stored`], since the sender transmits them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn new(dim: usize, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                got: values.len(),
            });
        }
        for pair in indices.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::InvalidCompressor(format!(
                    "sparse indices must be strictly increasing, found {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: last + 1,
                });
            }
        }
        Ok(Self {
            dim,
            indices,
            values,
        })
    }

    /// Every coordinate stored, in order.
    pub fn dense(values: Vec<f64>) -> Self {
        Self {
            dim: values.len(),
            indices: (0..values.len()).collect(),
            values,
        }
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    // Caller guarantees sorted, in-range indices.
    pub(crate) fn from_sorted_unchecked(dim: usize, indices: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(indices.len(), values.len());
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self {
            dim,
            indices,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored coordinates, i.e. the transmission cost.
    pub fn stored(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    /// `acc[i] += v` for every stored entry.
    pub fn add_into(&self, acc: &mut [f64]) {
        debug_assert_eq!(acc.len(), self.dim);
        for (i, v) in self.iter() {
            acc[i] += v;
        }
    }

    /// `acc[i] += scale * v` for every stored entry.
    pub fn scaled_add_into(&self, scale: f64, acc: &mut [f64]) {
        debug_assert_eq!(acc.len(), self.dim);
        for (i, v) in self.iter() {
            acc[i] += scale * v;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `y += a * x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Fixed-order average of equally sized dense vectors: sum in slice order,
/// then divide by the count. Every algorithm reduces through this routine
/// (or [`average_sparse`]) so that parameter-collapsed methods produce
/// identical floating-point results.
pub fn average_dense(vectors: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for v in vectors {
        debug_assert_eq!(v.len(), dim);
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    for a in acc.iter_mut() {
        *a /= n;
    }
    acc
}

/// Fixed-order average of sparse messages into a dense vector.
pub fn average_sparse(messages: &[SparseVector], dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for m in messages {
        m.add_into(&mut acc);
    }
    let n = messages.len() as f64;
    for a in acc.iter_mut() {
        *a /= n;
    }
    acc
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

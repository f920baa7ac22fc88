//! Dense parameter vectors.
//!
//! Every reduction (dot products, norms, means) runs in ascending index order
//! with a plain running sum, so results do not depend on how the surrounding
//! computation was scheduled.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Index, IndexMut};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VectorError {
    #[error("cannot average an empty list of vectors")]
    Empty,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// A dense vector of `f64` model coordinates (parameters, gradients, momenta).
#[derive(Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl From<&[f64]> for ParamVector {
    fn from(values: &[f64]) -> Self {
        Self(values.to_vec())
    }
}

impl<const N: usize> From<[f64; N]> for ParamVector {
    fn from(values: [f64; N]) -> Self {
        Self(values.to_vec())
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

impl IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, index: usize) -> &mut f64 {
        &mut self.0[index]
    }
}

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Self(vec![value; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> core::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Componentwise map into a new vector.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.iter().map(|&v| f(v)).collect())
    }

    /// Componentwise combination of two equal-length vectors.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.len(), other.len());
        Self(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        debug_assert_eq!(self.len(), other.len());
        for (a, &b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += alpha * b;
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        let mut acc = 0.0;
        for (a, b) in self.0.iter().zip(other.0.iter()) {
            acc += a * b;
        }
        acc
    }

    pub fn norm_l1(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.0 {
            acc += v.abs();
        }
        acc
    }

    pub fn norm_l2_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm_l2(&self) -> f64 {
        libm::sqrt(self.norm_l2_sq())
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Number of components that are not exactly zero.
    pub fn count_nonzero(&self) -> usize {
        self.0.iter().filter(|&&v| v != 0.0).count()
    }

    /// Componentwise mean in ascending worker order: `(x_1 + ... + x_n) / n`.
    pub fn mean_of(vectors: &[ParamVector]) -> Result<ParamVector, VectorError> {
        let first = vectors.first().ok_or(VectorError::Empty)?;
        let dim = first.len();
        let mut sum = first.clone();
        let mut all_equal = true;
        for v in &vectors[1..] {
            if v.len() != dim {
                return Err(VectorError::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            all_equal &= v.0.iter().zip(first.0.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
            for (s, &x) in sum.0.iter_mut().zip(v.0.iter()) {
                *s += x;
            }
        }
        // n copies of a vector average to itself; repeated addition would
        // round, so take the exact answer directly
        if all_equal {
            return Ok(first.clone());
        }
        let n = vectors.len() as f64;
        for s in sum.0.iter_mut() {
            *s /= n;
        }
        Ok(sum)
    }

    /// 64-bit FNV-1a hash over the little-endian bit patterns of the components.
    pub fn content_hash(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        for v in &self.0 {
            for byte in v.to_bits().to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(PRIME);
            }
        }
        h
    }
}

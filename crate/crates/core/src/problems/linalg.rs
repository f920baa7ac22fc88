//! Small dense symmetric matrices.

use alloc::vec;
use alloc::vec::Vec;

use crate::rng::RngStream;
use crate::vector::ParamVector;

/// Dense symmetric matrix in row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut data = vec![0.0; dim * dim];
        for (i, &d) in diag.iter().enumerate() {
            data[i * dim + i] = d;
        }
        Self { dim, data }
    }

    /// Builds from the upper triangle of `rows`, mirroring it so the result is
    /// exactly symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.len();
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            assert_eq!(rows[i].len(), dim, "matrix must be square");
            for j in i..dim {
                data[i * dim + j] = rows[i][j];
                data[j * dim + i] = rows[i][j];
            }
        }
        Self { dim, data }
    }

    /// `Q diag(eigs) Q^T` for a Haar-like random orthogonal `Q`.
    pub fn random_rotation_of(eigs: &[f64], rng: &mut RngStream) -> Self {
        let dim = eigs.len();
        let q = random_orthogonal(dim, rng);
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in i..dim {
                let mut acc = 0.0;
                for k in 0..dim {
                    acc += q[k][i] * eigs[k] * q[k][j];
                }
                data[i * dim + j] = acc;
                data[j * dim + i] = acc;
            }
        }
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn matvec(&self, x: &ParamVector) -> ParamVector {
        debug_assert_eq!(x.len(), self.dim);
        let mut out = ParamVector::zeros(self.dim);
        for i in 0..self.dim {
            let row = &self.data[i * self.dim..(i + 1) * self.dim];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.iter()) {
                acc += a * b;
            }
            out[i] = acc;
        }
        out
    }

    /// `x^T A x`
    pub fn quad_form(&self, x: &ParamVector) -> f64 {
        x.dot(&self.matvec(x))
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Largest eigenvalue of a positive-semidefinite matrix by power iteration.
    pub fn lambda_max(&self, tol: f64, max_iter: usize) -> f64 {
        power_iteration(self.dim, |v| self.matvec(v), tol, max_iter)
    }
}

/// Power iteration for the dominant eigenvalue of a PSD operator.
/// Stops once successive Rayleigh quotients differ by less than `tol` (relative).
pub fn power_iteration(
    dim: usize,
    apply: impl Fn(&ParamVector) -> ParamVector,
    tol: f64,
    max_iter: usize,
) -> f64 {
    // deterministic, non-degenerate start
    let mut v = ParamVector::from(
        (0..dim)
            .map(|i| 1.0 + 0.5 * libm::sin(1.0 + i as f64))
            .collect::<Vec<_>>(),
    );
    let n0 = v.norm_l2();
    v = v.scale(1.0 / n0);
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = apply(&v);
        let next = v.dot(&w);
        let norm = w.norm_l2();
        if norm == 0.0 {
            return 0.0;
        }
        v = w.scale(1.0 / norm);
        if (next - lambda).abs() <= tol * next.abs().max(f64::MIN_POSITIVE) {
            return next;
        }
        lambda = next;
    }
    lambda
}

fn random_orthogonal(dim: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
    // modified Gram-Schmidt on a Gaussian matrix; rows are the basis vectors
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
        for r in &rows {
            let p: f64 = r.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            for (x, a) in v.iter_mut().zip(r.iter()) {
                *x -= p * a;
            }
        }
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm < 1e-8 {
            continue;
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        rows.push(v);
    }
    rows
}

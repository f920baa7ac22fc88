use alloc::vec::Vec;

use super::linalg::SymMatrix;
use super::{Objective, ProblemError};
use crate::rng::{derive_stream, Phase, RngStream};
use crate::vector::ParamVector;

/// Shifted quadratics `f_i(x) = 1/2 (x - b_i)^T A (x - b_i)` with shared
/// curvature `A`. Worker heterogeneity comes only from the centers, so
/// `grad f(x) - grad f_i(x) = A (b_i - b_mean)` for every `x`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    a: SymMatrix,
    centers: Vec<ParamVector>,
    center_mean: ParamVector,
    noise_sigma: f64,
    x0: ParamVector,
    smoothness: f64,
}

/// Seeded generator parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSpec {
    pub dim: usize,
    pub workers: usize,
    pub noise_sigma: f64,
    /// Target heterogeneity `(1/n) sum_i ||A (b_i - b_mean)||^2`.
    pub delta_sq: f64,
    pub eig_min: f64,
    /// Also the smoothness constant `L`.
    pub eig_max: f64,
    /// Distance of the initial point from the global optimum.
    pub init_radius: f64,
    /// Random orthogonal eigenbasis instead of a diagonal `A`.
    pub rotate: bool,
    pub seed: u64,
}

impl Default for QuadraticSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            workers: 4,
            noise_sigma: 0.1,
            delta_sq: 1.0,
            eig_min: 0.1,
            eig_max: 1.0,
            init_radius: 1.0,
            rotate: false,
            seed: 0,
        }
    }
}

impl QuadraticProblem {
    pub fn new(
        a: SymMatrix,
        centers: Vec<ParamVector>,
        noise_sigma: f64,
        x0: ParamVector,
    ) -> Result<Self, ProblemError> {
        Self::assemble(a, centers, noise_sigma, x0, None)
    }

    fn assemble(
        a: SymMatrix,
        centers: Vec<ParamVector>,
        noise_sigma: f64,
        x0: ParamVector,
        smoothness: Option<f64>,
    ) -> Result<Self, ProblemError> {
        if centers.is_empty() {
            return Err(ProblemError::Invalid("at least one worker is required"));
        }
        if centers.iter().any(|b| b.len() != a.dim()) || x0.len() != a.dim() {
            return Err(ProblemError::Invalid("center dimension does not match A"));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(ProblemError::Invalid("noise_sigma must be nonnegative"));
        }
        let center_mean = ParamVector::mean_of(&centers).expect("non-empty, equal lengths");
        let smoothness = smoothness.unwrap_or_else(|| a.lambda_max(1e-13, 100_000));
        Ok(Self {
            a,
            centers,
            center_mean,
            noise_sigma,
            x0,
            smoothness,
        })
    }

    pub fn generate(spec: &QuadraticSpec) -> Result<Self, ProblemError> {
        if spec.dim == 0 || spec.workers == 0 {
            return Err(ProblemError::Invalid("dim and workers must be positive"));
        }
        if !(spec.eig_min > 0.0 && spec.eig_min <= spec.eig_max) {
            return Err(ProblemError::Invalid("need 0 < eig_min <= eig_max"));
        }
        if spec.delta_sq < 0.0 {
            return Err(ProblemError::Invalid("delta_sq must be nonnegative"));
        }
        let mut rng = derive_stream(spec.seed, 0, 0, Phase::Structure);
        let d = spec.dim;
        let eigs: Vec<f64> = (0..d)
            .map(|j| {
                if d == 1 || j == d - 1 {
                    spec.eig_max
                } else {
                    let t = j as f64 / (d - 1) as f64;
                    spec.eig_min * libm::pow(spec.eig_max / spec.eig_min, t)
                }
            })
            .collect();
        let a = if spec.rotate {
            SymMatrix::random_rotation_of(&eigs, &mut rng)
        } else {
            SymMatrix::diagonal(&eigs)
        };

        let base = gaussian(d, &mut rng);
        let mut offsets: Vec<ParamVector> = (0..spec.workers).map(|_| gaussian(d, &mut rng)).collect();
        let mean = ParamVector::mean_of(&offsets).expect("workers > 0");
        for o in offsets.iter_mut() {
            *o = o.sub(&mean);
        }
        let raw: f64 = offsets
            .iter()
            .map(|o| a.matvec(o).norm_l2_sq())
            .sum::<f64>()
            / spec.workers as f64;
        let scale = if spec.workers == 1 || spec.delta_sq == 0.0 || raw == 0.0 {
            0.0
        } else {
            libm::sqrt(spec.delta_sq / raw)
        };
        let centers: Vec<ParamVector> = offsets
            .iter()
            .map(|o| {
                let mut b = base.clone();
                b.axpy(scale, o);
                b
            })
            .collect();
        let center_mean = ParamVector::mean_of(&centers).expect("workers > 0");

        let dir = gaussian(d, &mut rng);
        let n = dir.norm_l2();
        let mut x0 = center_mean.clone();
        x0.axpy(spec.init_radius / n, &dir);

        // the generator knows the spectrum exactly
        Self::assemble(a, centers, spec.noise_sigma, x0, Some(spec.eig_max))
    }

    pub fn curvature(&self) -> &SymMatrix {
        &self.a
    }

    pub fn centers(&self) -> &[ParamVector] {
        &self.centers
    }

    /// Global minimizer `b_mean`.
    pub fn optimum(&self) -> &ParamVector {
        &self.center_mean
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn with_initial_point(mut self, x0: ParamVector) -> Self {
        self.x0 = x0;
        self
    }

    /// `(1/n) sum_i ||A (b_i - b_mean)||^2`; exact and independent of `x`.
    pub fn heterogeneity_delta_sq(&self) -> f64 {
        let mut acc = 0.0;
        for b in &self.centers {
            acc += self.a.matvec(&b.sub(&self.center_mean)).norm_l2_sq();
        }
        acc / self.centers.len() as f64
    }
}

fn gaussian(d: usize, rng: &mut RngStream) -> ParamVector {
    ParamVector::from((0..d).map(|_| rng.standard_normal()).collect::<Vec<_>>())
}

impl Objective for QuadraticProblem {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn workers(&self) -> usize {
        self.centers.len()
    }

    fn worker_loss(&self, worker: usize, x: &ParamVector) -> f64 {
        0.5 * self.a.quad_form(&x.sub(&self.centers[worker]))
    }

    fn worker_grad(&self, worker: usize, x: &ParamVector) -> ParamVector {
        self.a.matvec(&x.sub(&self.centers[worker]))
    }

    /// `A (x - b_i) + (sigma / sqrt(d)) g` with `g` standard normal.
    fn stochastic_grad(&self, worker: usize, x: &ParamVector, rng: &mut RngStream) -> ParamVector {
        let mut g = self.worker_grad(worker, x);
        if self.noise_sigma > 0.0 {
            let s = self.noise_sigma / libm::sqrt(self.dim() as f64);
            for j in 0..g.len() {
                g[j] += s * rng.standard_normal();
            }
        }
        g
    }

    fn initial_point(&self) -> ParamVector {
        self.x0.clone()
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.smoothness)
    }

    fn optimal_value(&self) -> Option<f64> {
        Some(self.loss(&self.center_mean))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn two_worker_scalar() -> QuadraticProblem {
        QuadraticProblem::new(
            SymMatrix::identity(1),
            vec![[0.0].into(), [2.0].into()],
            0.0,
            [0.0].into(),
        )
        .unwrap()
    }

    #[test]
    fn gradient_vanishes_at_worker_center() {
        let spec = QuadraticSpec {
            noise_sigma: 0.0,
            ..Default::default()
        };
        let p = QuadraticProblem::generate(&spec).unwrap();
        let mut rng = derive_stream(0, 0, 0, Phase::Local);
        for i in 0..p.workers() {
            let g = p.stochastic_grad(i, &p.centers()[i].clone(), &mut rng);
            assert!(g.norm_inf() == 0.0);
        }
    }

    #[test]
    fn identity_curvature_gradient() {
        let b = ParamVector::from([0.5, -1.0]);
        let p = QuadraticProblem::new(SymMatrix::identity(2), vec![b.clone()], 0.0, b.clone()).unwrap();
        let mut rng = derive_stream(0, 0, 0, Phase::Local);
        let x = b.add(&[1.0, 0.0].into());
        assert_eq!(p.stochastic_grad(0, &x, &mut rng), ParamVector::from([1.0, 0.0]));
    }

    #[test]
    fn full_gradient_two_workers() {
        let p = two_worker_scalar();
        // (1/2)((0 - 0) + (0 - 2)) = -1
        assert_eq!(p.full_grad(&[0.0].into()), ParamVector::from([-1.0]));
        assert_eq!(p.full_grad(&[1.0].into()), ParamVector::from([0.0]));
    }

    #[test]
    fn delta_two_workers() {
        // (1/2)(1 + 1)
        assert_eq!(two_worker_scalar().heterogeneity_delta_sq(), 1.0);
    }

    #[test]
    fn generator_hits_target_heterogeneity() {
        for rotate in [false, true] {
            let spec = QuadraticSpec {
                dim: 12,
                workers: 5,
                delta_sq: 2.5,
                rotate,
                seed: 3,
                ..Default::default()
            };
            let p = QuadraticProblem::generate(&spec).unwrap();
            assert!((p.heterogeneity_delta_sq() - 2.5).abs() < 1e-10);
            let x0 = p.initial_point();
            assert!((x0.sub(p.optimum()).norm_l2() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn homogeneous_workers_have_zero_delta() {
        let spec = QuadraticSpec {
            delta_sq: 0.0,
            ..Default::default()
        };
        assert_eq!(QuadraticProblem::generate(&spec).unwrap().heterogeneity_delta_sq(), 0.0);
    }

    #[test]
    fn delta_scales_quadratically() {
        let p = two_worker_scalar();
        let c = 3.0;
        let scaled = QuadraticProblem::new(
            SymMatrix::identity(1),
            p.centers().iter().map(|b| b.scale(c)).collect(),
            0.0,
            [0.0].into(),
        )
        .unwrap();
        assert!((scaled.heterogeneity_delta_sq() - c * c * p.heterogeneity_delta_sq()).abs() < 1e-12);
    }

    #[test]
    fn heterogeneity_gap_is_x_independent() {
        let spec = QuadraticSpec {
            dim: 6,
            workers: 3,
            rotate: true,
            ..Default::default()
        };
        let p = QuadraticProblem::generate(&spec).unwrap();
        let x1 = ParamVector::filled(6, 3.0);
        let x2 = ParamVector::filled(6, -1.5);
        for i in 0..3 {
            let g1 = p.full_grad(&x1).sub(&p.worker_grad(i, &x1));
            let g2 = p.full_grad(&x2).sub(&p.worker_grad(i, &x2));
            assert!(g1.sub(&g2).norm_inf() < 1e-12);
        }
    }
}

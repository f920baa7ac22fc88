//! Synthetic objectives `f = (1/n) sum_i f_i` with stochastic gradient oracles.

pub mod linalg;
mod logistic;
mod mlp;
mod quadratic;

use alloc::vec::Vec;
use thiserror::Error;

pub use logistic::{LogisticProblem, LogisticSpec};
pub use mlp::{MlpProblem, MlpSpec};
pub use quadratic::{QuadraticProblem, QuadraticSpec};

use crate::rng::RngStream;
use crate::vector::ParamVector;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProblemError {
    #[error("invalid problem: {0}")]
    Invalid(&'static str),
    #[error("operation only supported for {0} problems")]
    Unsupported(&'static str),
}

/// A finite-sum objective split across `workers()` local functions.
/// Implementations are immutable after construction and shared by all workers.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn workers(&self) -> usize;
    fn worker_loss(&self, worker: usize, x: &ParamVector) -> f64;
    /// Exact `grad f_i(x)`.
    fn worker_grad(&self, worker: usize, x: &ParamVector) -> ParamVector;
    /// Unbiased single-sample estimate of `grad f_i(x)`.
    fn stochastic_grad(&self, worker: usize, x: &ParamVector, rng: &mut RngStream) -> ParamVector;
    fn initial_point(&self) -> ParamVector;

    /// Known smoothness constant, if the family provides one.
    fn smoothness(&self) -> Option<f64> {
        None
    }

    fn strong_convexity(&self) -> Option<f64> {
        None
    }

    /// Exact `inf f`, if known in closed form.
    fn optimal_value(&self) -> Option<f64> {
        None
    }

    /// `(1/n) sum_i f_i(x)`, summed in worker order; exact when all `f_i(x)` agree.
    fn loss(&self, x: &ParamVector) -> f64 {
        let n = self.workers();
        let first = self.worker_loss(0, x);
        let mut acc = first;
        let mut all_equal = true;
        for i in 1..n {
            let l = self.worker_loss(i, x);
            all_equal &= l.to_bits() == first.to_bits();
            acc += l;
        }
        if all_equal {
            first
        } else {
            acc / n as f64
        }
    }

    /// `(1/n) sum_i grad f_i(x)`, summed in worker order.
    fn full_grad(&self, x: &ParamVector) -> ParamVector {
        let grads: Vec<ParamVector> = (0..self.workers()).map(|i| self.worker_grad(i, x)).collect();
        ParamVector::mean_of(&grads).expect("at least one worker")
    }
}

/// Closed set of problem families driven by configuration.
#[derive(Debug, Clone)]
pub enum Problem {
    Quadratic(QuadraticProblem),
    Logistic(LogisticProblem),
    Mlp(MlpProblem),
}

macro_rules! dispatch {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            Problem::Quadratic($p) => $e,
            Problem::Logistic($p) => $e,
            Problem::Mlp($p) => $e,
        }
    };
}

impl Problem {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Problem::Quadratic(_) => "quadratic",
            Problem::Logistic(_) => "logistic",
            Problem::Mlp(_) => "mlp",
        }
    }

    pub fn as_quadratic(&self) -> Option<&QuadraticProblem> {
        match self {
            Problem::Quadratic(q) => Some(q),
            _ => None,
        }
    }
}

impl Objective for Problem {
    fn dim(&self) -> usize {
        dispatch!(self, p => p.dim())
    }
    fn workers(&self) -> usize {
        dispatch!(self, p => p.workers())
    }
    fn worker_loss(&self, worker: usize, x: &ParamVector) -> f64 {
        dispatch!(self, p => p.worker_loss(worker, x))
    }
    fn worker_grad(&self, worker: usize, x: &ParamVector) -> ParamVector {
        dispatch!(self, p => p.worker_grad(worker, x))
    }
    fn stochastic_grad(&self, worker: usize, x: &ParamVector, rng: &mut RngStream) -> ParamVector {
        dispatch!(self, p => p.stochastic_grad(worker, x, rng))
    }
    fn initial_point(&self) -> ParamVector {
        dispatch!(self, p => p.initial_point())
    }
    fn smoothness(&self) -> Option<f64> {
        dispatch!(self, p => p.smoothness())
    }
    fn strong_convexity(&self) -> Option<f64> {
        dispatch!(self, p => p.strong_convexity())
    }
    fn optimal_value(&self) -> Option<f64> {
        dispatch!(self, p => p.optimal_value())
    }
    fn loss(&self, x: &ParamVector) -> f64 {
        dispatch!(self, p => p.loss(x))
    }
    fn full_grad(&self, x: &ParamVector) -> ParamVector {
        dispatch!(self, p => p.full_grad(x))
    }
}

/// Exact heterogeneity `(1/n) sum_i ||grad f(x) - grad f_i(x)||^2`; quadratic only.
pub fn heterogeneity_delta_sq(problem: &Problem) -> Result<f64, ProblemError> {
    problem
        .as_quadratic()
        .map(QuadraticProblem::heterogeneity_delta_sq)
        .ok_or(ProblemError::Unsupported("quadratic"))
}

/// Max over coordinates of `|fd_j - g_j| / max(|g_j|, 1)`, where `fd_j` is the
/// central difference of `f` along coordinate `j` and `g = full_grad(x)`.
pub fn finite_difference_check<O: Objective + ?Sized>(problem: &O, x: &ParamVector, h: f64) -> f64 {
    assert!(h > 0.0, "step must be positive");
    let g = problem.full_grad(x);
    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    for j in 0..x.len() {
        let orig = probe[j];
        probe[j] = orig + h;
        let up = problem.loss(&probe);
        probe[j] = orig - h;
        let down = problem.loss(&probe);
        probe[j] = orig;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - g[j]).abs() / g[j].abs().max(1.0));
    }
    worst
}

/// Approximates `inf f` by a long deterministic full-gradient run: accelerated
/// gradient with backtracking line search and function-value restarts.
/// Returns the smallest loss seen and the point attaining it.
pub fn reference_minimum<O: Objective + ?Sized>(problem: &O, start: &ParamVector, iters: usize) -> (f64, ParamVector) {
    let mut step = problem.smoothness().map(|l| 1.0 / l).unwrap_or(1.0);
    let mut x = start.clone();
    let mut y = x.clone();
    let mut fx = problem.loss(&x);
    let mut best = (fx, x.clone());
    let mut theta = 1.0f64;
    for _ in 0..iters {
        let gy = problem.full_grad(&y);
        let fy = problem.loss(&y);
        let gsq = gy.norm_l2_sq();
        if gsq == 0.0 {
            break;
        }
        // backtrack until the sufficient decrease condition holds at y
        let mut next;
        let mut fnext;
        loop {
            next = y.clone();
            next.axpy(-step, &gy);
            fnext = problem.loss(&next);
            if fnext <= fy - 0.5 * step * gsq || step < 1e-300 {
                break;
            }
            step *= 0.5;
        }
        if fnext > fx {
            // restart momentum from the last accepted point
            theta = 1.0;
            y = x.clone();
            continue;
        }
        let theta_next = 0.5 * (1.0 + libm::sqrt(1.0 + 4.0 * theta * theta));
        let w = (theta - 1.0) / theta_next;
        y = next.zip_map(&x, |a, b| a + w * (a - b));
        x = next;
        fx = fnext;
        theta = theta_next;
        if fx < best.0 {
            best = (fx, x.clone());
        }
        step *= 1.1;
    }
    best
}

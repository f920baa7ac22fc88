use alloc::vec::Vec;

use super::linalg::power_iteration;
use super::{Objective, ProblemError};
use crate::rng::{derive_stream, Phase, RngStream};
use crate::vector::ParamVector;

#[derive(Debug, Clone, PartialEq)]
struct Sample {
    features: ParamVector,
    label: f64,
}

/// L2-regularized logistic regression with one sample shard per worker.
#[derive(Debug, Clone)]
pub struct LogisticProblem {
    shards: Vec<Vec<Sample>>,
    reg: f64,
    dim: usize,
    smoothness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticSpec {
    pub dim: usize,
    pub workers: usize,
    pub samples_per_worker: usize,
    pub reg: f64,
    /// Per-component standard deviation of the isotropic feature noise.
    pub feature_scale: f64,
    /// Weight of the shared informative direction in every feature vector.
    pub signal: f64,
    /// Scale of the per-worker feature mean shift (heterogeneity).
    pub shift: f64,
    pub seed: u64,
}

impl Default for LogisticSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            workers: 4,
            samples_per_worker: 128,
            reg: 1e-2,
            feature_scale: 1.0,
            signal: 0.0,
            shift: 0.5,
            seed: 0,
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

impl LogisticProblem {
    pub fn generate(spec: &LogisticSpec) -> Result<Self, ProblemError> {
        if spec.dim == 0 || spec.workers == 0 || spec.samples_per_worker == 0 {
            return Err(ProblemError::Invalid("dim, workers and samples must be positive"));
        }
        if spec.reg < 0.0 {
            return Err(ProblemError::Invalid("reg must be nonnegative"));
        }
        let d = spec.dim;
        let mut rng = derive_stream(spec.seed, 0, 0, Phase::Structure);
        let teacher = random_vec(d, 1.0 / libm::sqrt(d as f64), &mut rng);
        let tn = teacher.norm_l2();
        let axis = teacher.scale(1.0 / tn);
        let mut shards = Vec::with_capacity(spec.workers);
        for _ in 0..spec.workers {
            let shift = random_vec(d, spec.shift / libm::sqrt(d as f64), &mut rng);
            let mut shard = Vec::with_capacity(spec.samples_per_worker);
            for _ in 0..spec.samples_per_worker {
                let mut a = random_vec(d, spec.feature_scale, &mut rng);
                a = a.add(&shift);
                a.axpy(spec.signal * rng.standard_normal(), &axis);
                let p = sigmoid(4.0 * teacher.dot(&a));
                let label = if rng.uniform() < p { 1.0 } else { 0.0 };
                shard.push(Sample { features: a, label });
            }
            shards.push(shard);
        }
        Self::from_shards_internal(shards, spec.reg, d)
    }

    /// Builds from explicit `(features, label)` shards; labels must be 0 or 1.
    pub fn from_shards(shards: Vec<Vec<(ParamVector, f64)>>, reg: f64) -> Result<Self, ProblemError> {
        let dim = shards
            .first()
            .and_then(|s| s.first())
            .map(|(a, _)| a.len())
            .ok_or(ProblemError::Invalid("need at least one sample per worker"))?;
        let mut out = Vec::with_capacity(shards.len());
        for shard in shards {
            if shard.is_empty() {
                return Err(ProblemError::Invalid("need at least one sample per worker"));
            }
            let mut s = Vec::with_capacity(shard.len());
            for (features, label) in shard {
                if features.len() != dim {
                    return Err(ProblemError::Invalid("feature dimension mismatch"));
                }
                if label != 0.0 && label != 1.0 {
                    return Err(ProblemError::Invalid("labels must be 0 or 1"));
                }
                s.push(Sample { features, label });
            }
            out.push(s);
        }
        Self::from_shards_internal(out, reg, dim)
    }

    fn from_shards_internal(shards: Vec<Vec<Sample>>, reg: f64, dim: usize) -> Result<Self, ProblemError> {
        let mut p = Self {
            shards,
            reg,
            dim,
            smoothness: 0.0,
        };
        p.smoothness = p.smoothness_bound();
        Ok(p)
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    /// `1/4 * lambda_max((1/m) X^T X) + reg` over the pooled samples, which
    /// bounds the smoothness of `f` (and of each `f_i` with its own shard).
    fn smoothness_bound(&self) -> f64 {
        let total: usize = self.shards.iter().map(|s| s.len()).sum();
        let lam = power_iteration(
            self.dim,
            |v| {
                let mut out = ParamVector::zeros(self.dim);
                for s in self.shards.iter().flatten() {
                    let c = s.features.dot(v);
                    out.axpy(c, &s.features);
                }
                out.scale(1.0 / total as f64)
            },
            1e-12,
            10_000,
        );
        0.25 * lam + self.reg
    }

    fn sample_loss(&self, s: &Sample, x: &ParamVector) -> f64 {
        let z = s.features.dot(x);
        softplus(z) - s.label * z
    }

    fn add_sample_grad(&self, s: &Sample, x: &ParamVector, weight: f64, out: &mut ParamVector) {
        let z = s.features.dot(x);
        out.axpy(weight * (sigmoid(z) - s.label), &s.features);
    }
}

fn random_vec(d: usize, scale: f64, rng: &mut RngStream) -> ParamVector {
    ParamVector::from((0..d).map(|_| scale * rng.standard_normal()).collect::<Vec<_>>())
}

impl Objective for LogisticProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn workers(&self) -> usize {
        self.shards.len()
    }

    fn worker_loss(&self, worker: usize, x: &ParamVector) -> f64 {
        let shard = &self.shards[worker];
        let mut acc = 0.0;
        for s in shard {
            acc += self.sample_loss(s, x);
        }
        acc / shard.len() as f64 + 0.5 * self.reg * x.norm_l2_sq()
    }

    fn worker_grad(&self, worker: usize, x: &ParamVector) -> ParamVector {
        let shard = &self.shards[worker];
        let mut g = ParamVector::zeros(self.dim);
        let w = 1.0 / shard.len() as f64;
        for s in shard {
            self.add_sample_grad(s, x, w, &mut g);
        }
        g.axpy(self.reg, x);
        g
    }

    fn stochastic_grad(&self, worker: usize, x: &ParamVector, rng: &mut RngStream) -> ParamVector {
        let shard = &self.shards[worker];
        let s = &shard[rng.index(shard.len())];
        let mut g = ParamVector::zeros(self.dim);
        self.add_sample_grad(s, x, 1.0, &mut g);
        g.axpy(self.reg, x);
        g
    }

    fn initial_point(&self) -> ParamVector {
        ParamVector::zeros(self.dim)
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.smoothness)
    }

    fn strong_convexity(&self) -> Option<f64> {
        Some(self.reg)
    }
}

use alloc::vec::Vec;

use super::{Objective, ProblemError};
use crate::rng::{derive_stream, Phase, RngStream};
use crate::vector::ParamVector;

#[derive(Debug, Clone)]
struct Sample {
    input: Vec<f64>,
    target: f64,
}

/// Two-layer perceptron `y = w2^T tanh(W1 a + b1) + b2` fitted with squared
/// loss `1/2 (y - target)^2`. Parameters are packed as
/// `[W1 (row-major, hidden x input), b1, w2, b2]`.
#[derive(Debug, Clone)]
pub struct MlpProblem {
    input: usize,
    hidden: usize,
    shards: Vec<Vec<Sample>>,
    x0: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: usize,
    pub workers: usize,
    pub samples_per_worker: usize,
    /// Standard deviation of additive target noise.
    pub target_noise: f64,
    /// Scale of the per-worker input mean shift.
    pub shift: f64,
    pub seed: u64,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            input: 4,
            hidden: 8,
            workers: 4,
            samples_per_worker: 64,
            target_noise: 0.1,
            shift: 0.5,
            seed: 0,
        }
    }
}

impl MlpProblem {
    pub fn generate(spec: &MlpSpec) -> Result<Self, ProblemError> {
        if spec.input == 0 || spec.hidden == 0 || spec.workers == 0 || spec.samples_per_worker == 0 {
            return Err(ProblemError::Invalid("mlp sizes must be positive"));
        }
        let mut rng = derive_stream(spec.seed, 0, 0, Phase::Structure);
        let dim = Self::param_count(spec.input, spec.hidden);
        let teacher = random_params(dim, spec.input, &mut rng);
        let x0 = random_params(dim, spec.input, &mut rng).scale(0.5);
        let mut shards = Vec::with_capacity(spec.workers);
        let mut p = Self {
            input: spec.input,
            hidden: spec.hidden,
            shards: Vec::new(),
            x0,
        };
        for _ in 0..spec.workers {
            let shift: Vec<f64> = (0..spec.input).map(|_| spec.shift * rng.standard_normal()).collect();
            let mut shard = Vec::with_capacity(spec.samples_per_worker);
            for _ in 0..spec.samples_per_worker {
                let input: Vec<f64> = shift.iter().map(|s| s + rng.standard_normal()).collect();
                let clean = p.forward(&teacher, &input);
                let target = clean + spec.target_noise * rng.standard_normal();
                shard.push(Sample { input, target });
            }
            shards.push(shard);
        }
        p.shards = shards;
        Ok(p)
    }

    pub fn param_count(input: usize, hidden: usize) -> usize {
        hidden * input + 2 * hidden + 1
    }

    fn forward(&self, w: &ParamVector, a: &[f64]) -> f64 {
        let (h, i) = (self.hidden, self.input);
        let (b1, w2, b2) = (h * i, h * i + h, h * i + 2 * h);
        let mut out = w[b2];
        for r in 0..h {
            let mut z = w[b1 + r];
            for c in 0..i {
                z += w[r * i + c] * a[c];
            }
            out += w[w2 + r] * libm::tanh(z);
        }
        out
    }

    /// Adds `weight * grad_w (1/2)(y - t)^2` into `out`.
    fn add_sample_grad(&self, w: &ParamVector, s: &Sample, weight: f64, out: &mut ParamVector) {
        let (h, i) = (self.hidden, self.input);
        let (b1, w2, b2) = (h * i, h * i + h, h * i + 2 * h);
        let mut act = Vec::with_capacity(h);
        let mut y = w[b2];
        for r in 0..h {
            let mut z = w[b1 + r];
            for c in 0..i {
                z += w[r * i + c] * s.input[c];
            }
            let a = libm::tanh(z);
            act.push(a);
            y += w[w2 + r] * a;
        }
        let e = weight * (y - s.target);
        out[b2] += e;
        for (r, &a) in act.iter().enumerate() {
            out[w2 + r] += e * a;
            let dz = e * w[w2 + r] * (1.0 - a * a);
            out[b1 + r] += dz;
            for c in 0..i {
                out[r * i + c] += dz * s.input[c];
            }
        }
    }
}

fn random_params(dim: usize, input: usize, rng: &mut RngStream) -> ParamVector {
    let s = 1.0 / libm::sqrt(input as f64);
    ParamVector::from((0..dim).map(|_| s * rng.standard_normal()).collect::<Vec<_>>())
}

impl Objective for MlpProblem {
    fn dim(&self) -> usize {
        Self::param_count(self.input, self.hidden)
    }

    fn workers(&self) -> usize {
        self.shards.len()
    }

    fn worker_loss(&self, worker: usize, x: &ParamVector) -> f64 {
        let shard = &self.shards[worker];
        let mut acc = 0.0;
        for s in shard {
            let r = self.forward(x, &s.input) - s.target;
            acc += 0.5 * r * r;
        }
        acc / shard.len() as f64
    }

    fn worker_grad(&self, worker: usize, x: &ParamVector) -> ParamVector {
        let shard = &self.shards[worker];
        let mut g = ParamVector::zeros(self.dim());
        let w = 1.0 / shard.len() as f64;
        for s in shard {
            self.add_sample_grad(x, s, w, &mut g);
        }
        g
    }

    fn stochastic_grad(&self, worker: usize, x: &ParamVector, rng: &mut RngStream) -> ParamVector {
        let shard = &self.shards[worker];
        let s = &shard[rng.index(shard.len())];
        let mut g = ParamVector::zeros(self.dim());
        self.add_sample_grad(x, s, 1.0, &mut g);
        g
    }

    fn initial_point(&self) -> ParamVector {
        self.x0.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_predict_zero() {
        let p = MlpProblem::generate(&MlpSpec::default()).unwrap();
        let w = ParamVector::zeros(p.dim());
        assert_eq!(p.forward(&w, &[1.0, 2.0, 3.0, 4.0]), 0.0);
        assert_eq!(p.dim(), 8 * 4 + 16 + 1);
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = MlpProblem::generate(&MlpSpec::default()).unwrap();
        let b = MlpProblem::generate(&MlpSpec::default()).unwrap();
        let x = a.initial_point();
        assert_eq!(a.loss(&x).to_bits(), b.loss(&x).to_bits());
    }
}

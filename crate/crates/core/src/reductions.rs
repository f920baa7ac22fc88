//! Straight-line reference optimizers replayed on a recorded gradient stream.
//!
//! These loops deliberately share nothing with the engine except `ParamVector`
//! storage, so agreement between the two is evidence for both.

use alloc::vec::Vec;
use thiserror::Error;

use crate::vector::ParamVector;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("gradient stream exhausted after {consumed} gradients")]
    StreamExhausted { consumed: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceKind {
    /// `m <- beta m + (1 - beta) g`, `x <- x - lr sign(m)`.
    SignSgdMomentum { beta: f64, lr: f64 },
    /// Lion with decoupled weight decay.
    Lion {
        beta1: f64,
        beta2: f64,
        weight_decay: f64,
        lr: f64,
    },
    /// `inner` SGD steps of size `inner_lr`, then `x <- x + outer_lr (x_inner - x)`.
    Lookahead { inner: usize, inner_lr: f64, outer_lr: f64 },
    /// `inner` SGD steps, then `u = beta m + ((1 - beta) / inner_lr)(x - x_inner)`,
    /// `x <- x - outer_lr inner_lr sign(u)` and `m` updated like `u`.
    SignedLookahead {
        inner: usize,
        inner_lr: f64,
        outer_lr: f64,
        beta: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceLoop {
    pub kind: ReferenceKind,
    pub x0: ParamVector,
}

/// Gradients in the order they were consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientStream {
    grads: Vec<ParamVector>,
    cursor: usize,
}

impl GradientStream {
    pub fn new(grads: Vec<ParamVector>) -> Self {
        Self { grads, cursor: 0 }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    fn next(&mut self) -> Result<&ParamVector, ReplayError> {
        let g = self
            .grads
            .get(self.cursor)
            .ok_or(ReplayError::StreamExhausted { consumed: self.cursor })?;
        self.cursor += 1;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    /// `steps + 1` iterates, starting with `x0`.
    pub trajectory: Vec<ParamVector>,
}

impl Replay {
    pub fn final_x(&self) -> &ParamVector {
        self.trajectory.last().expect("trajectory starts with x0")
    }
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Runs `steps` iterations of the reference recursion. An iteration is one
/// gradient for the single-step kinds and one outer round (`inner` gradients)
/// for the Lookahead kinds.
pub fn replay(reference: &ReferenceLoop, stream: &mut GradientStream, steps: usize) -> Result<Replay, ReplayError> {
    let d = reference.x0.len();
    let mut x = reference.x0.clone().into_vec();
    let mut m = alloc::vec![0.0; d];
    let mut trajectory = Vec::with_capacity(steps + 1);
    trajectory.push(reference.x0.clone());
    for _ in 0..steps {
        match reference.kind {
            ReferenceKind::SignSgdMomentum { beta, lr } => {
                let g = stream.next()?;
                for j in 0..d {
                    m[j] = beta * m[j] + (1.0 - beta) * g[j];
                    x[j] -= lr * sgn(m[j]);
                }
            }
            ReferenceKind::Lion {
                beta1,
                beta2,
                weight_decay,
                lr,
            } => {
                let g = stream.next()?;
                for j in 0..d {
                    let u = beta1 * m[j] + (1.0 - beta1) * g[j];
                    x[j] -= lr * (sgn(u) + weight_decay * x[j]);
                    m[j] = beta2 * m[j] + (1.0 - beta2) * g[j];
                }
            }
            ReferenceKind::Lookahead {
                inner,
                inner_lr,
                outer_lr,
            } => {
                let mut z = x.clone();
                for _ in 0..inner {
                    let g = stream.next()?;
                    for j in 0..d {
                        z[j] -= inner_lr * g[j];
                    }
                }
                for j in 0..d {
                    x[j] += outer_lr * (z[j] - x[j]);
                }
            }
            ReferenceKind::SignedLookahead {
                inner,
                inner_lr,
                outer_lr,
                beta,
            } => {
                let mut z = x.clone();
                for _ in 0..inner {
                    let g = stream.next()?;
                    for j in 0..d {
                        z[j] -= inner_lr * g[j];
                    }
                }
                let step = outer_lr * inner_lr;
                let c = (1.0 - beta) / inner_lr;
                for j in 0..d {
                    let moved = x[j] - z[j];
                    let u = beta * m[j] + c * moved;
                    x[j] -= step * sgn(u);
                    m[j] = beta * m[j] + c * moved;
                }
            }
        }
        trajectory.push(ParamVector::from(x.clone()));
    }
    Ok(Replay { trajectory })
}

//! Local base optimizers.
//!
//! Each optimizer turns a stochastic gradient into the direction `d` consumed
//! by the local step `x <- x - gamma * d`. Decoupled weight decay is folded into
//! `d` (as `+ lambda * x`), so one step rule serves every optimizer.

use crate::sign_ops::hard_sign;
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseOptKind {
    Sgd,
    Polyak,
    AdamW,
    Lion,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseOptParams {
    pub kind: BaseOptKind,
    /// Polyak momentum coefficient; first-moment coefficient for AdamW and Lion.
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl BaseOptParams {
    pub fn sgd() -> Self {
        Self {
            kind: BaseOptKind::Sgd,
            beta1: 0.0,
            beta2: 0.0,
            weight_decay: 0.0,
            eps: 1e-8,
        }
    }

    pub fn polyak(beta: f64) -> Self {
        Self {
            kind: BaseOptKind::Polyak,
            beta1: beta,
            ..Self::sgd()
        }
    }

    pub fn adamw(beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self {
            kind: BaseOptKind::AdamW,
            beta1,
            beta2,
            weight_decay,
            eps: 1e-8,
        }
    }

    pub fn lion(beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self {
            kind: BaseOptKind::Lion,
            beta1,
            beta2,
            weight_decay,
            eps: 0.0,
        }
    }
}

/// Optimizer state owned by a single worker.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseOptState {
    pub params: BaseOptParams,
    /// First moment (momentum buffer), zero-initialized.
    pub m: ParamVector,
    /// Second moment, AdamW only, zero-initialized.
    pub v: ParamVector,
    /// Number of directions produced since reset.
    pub step_count: u64,
}

impl BaseOptState {
    pub fn new(params: BaseOptParams, dim: usize) -> Self {
        Self {
            params,
            m: ParamVector::zeros(dim),
            v: ParamVector::zeros(dim),
            step_count: 0,
        }
    }

    pub fn reset(&mut self) {
        let dim = self.m.len();
        *self = Self::new(self.params, dim);
    }

    /// Direction for the configured optimizer kind.
    pub fn direction(&mut self, grad: &ParamVector, x: &ParamVector) -> ParamVector {
        match self.params.kind {
            BaseOptKind::Sgd => self.sgd_direction(grad),
            BaseOptKind::Polyak => self.polyak_direction(grad, self.params.beta1),
            BaseOptKind::AdamW => self.adamw_direction(grad, x),
            BaseOptKind::Lion => self.lion_direction(grad, x),
        }
    }

    pub fn sgd_direction(&mut self, grad: &ParamVector) -> ParamVector {
        self.step_count += 1;
        grad.clone()
    }

    /// `m <- beta * m + g`, returns the new `m`.
    pub fn polyak_direction(&mut self, grad: &ParamVector, beta: f64) -> ParamVector {
        self.step_count += 1;
        self.m = self.m.zip_map(grad, |m, g| beta * m + g);
        self.m.clone()
    }

    /// Bias-corrected Adam direction plus decoupled decay `lambda * x`.
    pub fn adamw_direction(&mut self, grad: &ParamVector, x: &ParamVector) -> ParamVector {
        self.step_count += 1;
        let BaseOptParams {
            beta1,
            beta2,
            weight_decay,
            eps,
            ..
        } = self.params;
        let t = self.step_count as f64;
        self.m = self.m.zip_map(grad, |m, g| beta1 * m + (1.0 - beta1) * g);
        self.v = self.v.zip_map(grad, |v, g| beta2 * v + (1.0 - beta2) * g * g);
        let bc1 = 1.0 - libm::pow(beta1, t);
        let bc2 = 1.0 - libm::pow(beta2, t);
        let mut d = ParamVector::zeros(grad.len());
        for j in 0..grad.len() {
            let m_hat = self.m[j] / bc1;
            let v_hat = self.v[j] / bc2;
            d[j] = m_hat / (libm::sqrt(v_hat) + eps) + weight_decay * x[j];
        }
        d
    }

    /// `sign(beta1 * m + (1 - beta1) * g) + lambda * x`, then
    /// `m <- beta2 * m + (1 - beta2) * g`.
    pub fn lion_direction(&mut self, grad: &ParamVector, x: &ParamVector) -> ParamVector {
        self.step_count += 1;
        let BaseOptParams {
            beta1,
            beta2,
            weight_decay,
            ..
        } = self.params;
        let u = self.m.zip_map(grad, |m, g| beta1 * m + (1.0 - beta1) * g);
        let d = hard_sign(&u).zip_map(x, |s, xj| s + weight_decay * xj);
        self.m = self.m.zip_map(grad, |m, g| beta2 * m + (1.0 - beta2) * g);
        d
    }
}

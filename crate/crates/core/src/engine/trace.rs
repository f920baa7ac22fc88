use alloc::vec::Vec;

use super::Variant;
use crate::vector::ParamVector;

/// Snapshots of `x` are kept in memory up to this dimension; larger runs keep
/// only the content hash.
pub const SNAPSHOT_MAX_DIM: usize = 1024;

/// Per-round summary. Record 0 describes the initial point and has
/// `gamma = 0` and `max_dir_norm = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    pub gamma: f64,
    pub loss: f64,
    pub grad_l1: f64,
    pub grad_l2sq: f64,
    /// Largest `||d||_2` over all workers and local steps of the round.
    pub max_dir_norm: f64,
    pub x_hash: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub variant: Variant,
    pub workers: usize,
    pub local_steps: usize,
    pub rounds: u64,
    pub dim: usize,
    pub global_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Bound `B` of the randomized global sign, if one is used.
    pub sign_bound: Option<f64>,
    pub seed: u64,
}

/// Opt-in per-step detail of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundDebug {
    pub gamma: f64,
    /// `x_{t,0}`
    pub x_start: ParamVector,
    /// `m_t`, before the round's global step.
    pub m_start: ParamVector,
    /// `(1/n) sum_i d_{t,k}^(i)` for `k = 0..tau`.
    pub mean_dirs: Vec<ParamVector>,
    /// Worker 0's stochastic gradients `g_{t,k}^(0)`.
    pub worker0_grads: Vec<ParamVector>,
    /// Worker 0's base-optimizer directions `d_{t,k}^(0)`.
    pub worker0_dirs: Vec<ParamVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub meta: RunMeta,
    /// `rounds + 1` records.
    pub records: Vec<RoundRecord>,
    /// `x_{t,0}` for every record when `dim <= SNAPSHOT_MAX_DIM`, else empty.
    pub snapshots: Vec<ParamVector>,
    /// `||m_t||_2` for every record.
    pub momentum_norms: Vec<f64>,
    /// Per-round inner-average squared gradient norm, when instrumented.
    pub inner_grad_sq: Vec<f64>,
    /// Per-round step detail, when instrumented.
    pub debug: Vec<RoundDebug>,
}

impl RunTrace {
    pub fn final_record(&self) -> &RoundRecord {
        self.records.last().expect("a trace always holds the initial record")
    }

    /// `R_hat`: largest direction norm over the whole run.
    pub fn max_dir_norm(&self) -> f64 {
        self.records.iter().fold(0.0, |m, r| m.max(r.max_dir_norm))
    }

    pub fn max_momentum_norm(&self) -> f64 {
        self.momentum_norms.iter().fold(0.0, |m, &v| m.max(v))
    }

    /// FNV-1a over every record's bit pattern; equal traces hash equally.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for r in &self.records {
            eat(r.round);
            eat(r.gamma.to_bits());
            eat(r.loss.to_bits());
            eat(r.grad_l1.to_bits());
            eat(r.grad_l2sq.to_bits());
            eat(r.max_dir_norm.to_bits());
            eat(r.x_hash);
        }
        h
    }
}

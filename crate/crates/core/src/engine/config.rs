use alloc::format;
use alloc::string::String;

use super::EngineError;
use crate::base_opt::BaseOptParams;
use crate::schedule::Schedule;
use crate::sign_ops::SignMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Local steps, all-reduce, then the global sign-momentum step.
    Dsm,
    /// Local steps with a heavy-ball slow momentum on the pseudo-gradient.
    SlowMo,
    /// SlowMo driven by the sign of the displacement.
    SignedSlowMo,
    /// Local steps and model averaging only.
    LocalAvg,
    /// AdamW applied at the global level to the pseudo-gradient.
    GlobalAdamW,
    /// Extrapolated local SGD with per-worker momentum and a compressed majority vote.
    FedMv,
    /// One sign-momentum step per round on the worker-averaged gradient.
    CentralizedSignSgdMomentum,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Dsm,
        Variant::SlowMo,
        Variant::SignedSlowMo,
        Variant::LocalAvg,
        Variant::GlobalAdamW,
        Variant::FedMv,
        Variant::CentralizedSignSgdMomentum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dsm => "dsm",
            Variant::SlowMo => "slowmo",
            Variant::SignedSlowMo => "signed_slowmo",
            Variant::LocalAvg => "local_avg",
            Variant::GlobalAdamW => "global_adamw",
            Variant::FedMv => "fedmv",
            Variant::CentralizedSignSgdMomentum => "centralized_signsgd_momentum",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, EngineError> {
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.name() == name)
            .ok_or_else(|| EngineError::Config(format!("unknown variant `{name}`")))
    }

    /// Whether the global step divides by the local learning rate.
    fn needs_positive_gamma(self) -> bool {
        !matches!(self, Variant::LocalAvg | Variant::FedMv)
    }
}

/// Opt-in recording for invariant checks and reference replays.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Instrumentation {
    /// Per-step worker-mean directions, worker 0's gradients and directions,
    /// and the round-start `x` and `m`.
    pub record_steps: bool,
    /// `(1/tau) sum_k ||grad f(mean_i x_{t,k}^(i))||^2` per round.
    pub inner_grad_metric: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperConfig {
    pub workers: usize,
    pub local_steps: usize,
    pub rounds: u64,
    /// Local learning rate; round `t` uses `local_lr.rate(t + 1)`.
    pub local_lr: Schedule,
    /// `eta`; the outer rate `alpha` for SlowMo.
    pub global_lr: f64,
    /// Also the momentum coefficient of SlowMo, signed SlowMo and FedMV.
    pub beta1: f64,
    pub beta2: f64,
    /// Decoupled global weight decay `lambda`.
    pub weight_decay: f64,
    /// Global sign operator; randomized modes carry `B = tau * R`.
    pub sign_mode: SignMode,
    pub base: BaseOptParams,
    pub variant: Variant,
    /// FedMV extrapolation coefficient.
    pub fedmv_alpha: f64,
    /// FedMV vote-compression bound.
    pub fedmv_bound: f64,
    /// Epsilon of the global AdamW step.
    pub global_eps: f64,
    pub seed: u64,
    /// Upper limit on `workers * local_steps * rounds`.
    pub work_budget: u64,
    pub instrument: Instrumentation,
}

impl HyperConfig {
    /// Lion-style global defaults with a plain SGD base and hard sign.
    pub fn new(variant: Variant, workers: usize, local_steps: usize, rounds: u64) -> Self {
        Self {
            workers,
            local_steps,
            rounds,
            local_lr: Schedule::constant(0.01),
            global_lr: 1.0,
            beta1: 0.95,
            beta2: 0.98,
            weight_decay: 0.0,
            sign_mode: SignMode::HARD,
            base: BaseOptParams::sgd(),
            variant,
            fedmv_alpha: 0.0,
            fedmv_bound: 1.0,
            global_eps: 1e-8,
            seed: 0,
            work_budget: 1 << 34,
            instrument: Instrumentation::default(),
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: &str| Err(EngineError::Config(String::from(msg)));
        if self.workers == 0 || self.workers > u16::MAX as usize {
            return bad("workers must be in 1..=65535");
        }
        if self.local_steps == 0 {
            return bad("local_steps must be at least 1");
        }
        if self.rounds == 0 || self.rounds >= u32::MAX as u64 {
            return bad("rounds must be in 1..2^32-1");
        }
        let work = (self.workers as u64)
            .saturating_mul(self.local_steps as u64)
            .saturating_mul(self.rounds);
        if work > self.work_budget {
            return Err(EngineError::Config(format!(
                "workers * local_steps * rounds = {work} exceeds the work budget {}",
                self.work_budget
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..=1.0).contains(&b) {
                return Err(EngineError::Config(format!("{name} must lie in [0, 1], got {b}")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be nonnegative");
        }
        if !(self.global_lr > 0.0 && self.global_lr.is_finite()) {
            return bad("global_lr must be positive");
        }
        if self.local_lr.total_steps < self.rounds {
            return bad("local_lr schedule must cover every round");
        }
        self.local_lr
            .validate()
            .map_err(|e| EngineError::Config(format!("local_lr: {e}")))?;
        if self.sign_mode.is_randomized() && !(self.sign_mode.bound > 0.0 && self.sign_mode.bound.is_finite()) {
            return bad("randomized sign needs a positive finite bound");
        }
        if self.variant == Variant::FedMv {
            if !(self.fedmv_bound > 0.0 && self.fedmv_bound.is_finite()) {
                return bad("fedmv_bound must be positive");
            }
            if self.beta1 >= 1.0 {
                return bad("fedmv momentum coefficient beta1 must be below 1");
            }
        }
        if self.variant.needs_positive_gamma() {
            for t in 0..self.rounds {
                let g = self.gamma(t)?;
                if !(g > 0.0) {
                    return Err(EngineError::Config(format!(
                        "local learning rate must be positive for {}, round {t} has {g}",
                        self.variant.name()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Local learning rate of round `t`.
    pub fn gamma(&self, round: u64) -> Result<f64, EngineError> {
        self.local_lr
            .rate(round + 1)
            .map_err(|e| EngineError::Config(format!("local_lr: {e}")))
    }
}

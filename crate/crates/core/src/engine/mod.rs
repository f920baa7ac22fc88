//! Deterministic simulation of local-step distributed training.
//!
//! Every round runs `tau` base-optimizer steps on each worker, averages the
//! workers' models in fixed index order, and applies the variant's global
//! step. All randomness comes from per-(worker, round, phase) streams, so the
//! result does not depend on the order in which workers execute.

mod config;
mod exec;
mod trace;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

pub use config::{HyperConfig, Instrumentation, Variant};
pub use exec::{LocalExecutor, Sequential, WorkerJob};
pub use trace::{RoundDebug, RoundRecord, RunMeta, RunTrace, SNAPSHOT_MAX_DIM};

use crate::base_opt::{BaseOptParams, BaseOptState};
use crate::problems::Objective;
use crate::rng::{derive_stream, Phase, RngStream};
use crate::sign_ops::{hard_sign, majority_vote_sign, SignError, SignMode, SignVariant};
use crate::vector::ParamVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Sign(#[from] SignError),
    #[error("non-finite parameter on worker {worker} in round {round}")]
    NonFiniteParameter { round: u64, worker: usize },
    #[error("non-finite loss after round {round}")]
    NonFiniteLoss { round: u64 },
    #[error("all-reduce needs at least one vector of a common length")]
    Reduce,
}

/// Worker `i`'s private copy of the model and optimizer.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub id: usize,
    /// `x_{t,k}^(i)`
    pub x: ParamVector,
    pub base: BaseOptState,
    /// Stream of the current round's local phase.
    pub rng: RngStream,
    /// Largest direction norm of the current round.
    pub max_dir_norm: f64,
    /// FedMV per-worker momentum.
    pub vote_momentum: ParamVector,
    /// FedMV compressed vote, or the round's single gradient in the centralized variant.
    pub message: ParamVector,
    /// Iterates, gradients and directions of the current round when recording.
    pub log_x: Vec<ParamVector>,
    pub log_grad: Vec<ParamVector>,
    pub log_dir: Vec<ParamVector>,
}

impl WorkerState {
    pub fn new(id: usize, x: &ParamVector, base: BaseOptParams, seed: u64) -> Self {
        let dim = x.len();
        Self {
            id,
            x: x.clone(),
            base: BaseOptState::new(base, dim),
            rng: derive_stream(seed, id as u16, 0, Phase::Local),
            max_dir_norm: 0.0,
            vote_momentum: ParamVector::zeros(dim),
            message: ParamVector::zeros(dim),
            log_x: Vec::new(),
            log_grad: Vec::new(),
            log_dir: Vec::new(),
        }
    }
}

/// Server-side state shared by all workers.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    /// `x_{t,0}`
    pub x: ParamVector,
    /// `m_t`; the slow momentum `u_t` for SlowMo and signed SlowMo.
    pub m: ParamVector,
    pub round: u64,
    /// `x_{t-1}` for the FedMV extrapolation.
    pub x_prev: ParamVector,
    /// Moments of the global AdamW step.
    pub adam: BaseOptState,
}

impl GlobalState {
    pub fn new(x: ParamVector, cfg: &HyperConfig) -> Self {
        let dim = x.len();
        let mut adam = BaseOptParams::adamw(cfg.beta1, cfg.beta2, cfg.weight_decay);
        adam.eps = cfg.global_eps;
        Self {
            x_prev: x.clone(),
            x,
            m: ParamVector::zeros(dim),
            round: 0,
            adam: BaseOptState::new(adam, dim),
        }
    }
}

/// Per-round parameters of the local phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalPhase {
    pub gamma: f64,
    pub tau: usize,
    pub seed: u64,
    pub round: u64,
    /// Keep each worker's iterates, gradients and directions.
    pub record: bool,
}

fn local_steps<O: Objective + ?Sized>(w: &mut WorkerState, problem: &O, p: &LocalPhase) -> Result<(), EngineError> {
    w.rng = derive_stream(p.seed, w.id as u16, p.round as u32, Phase::Local);
    w.max_dir_norm = 0.0;
    w.log_x.clear();
    w.log_grad.clear();
    w.log_dir.clear();
    for _ in 0..p.tau {
        let grad = w.rng_grad(problem);
        let dir = w.base.direction(&grad, &w.x);
        w.max_dir_norm = w.max_dir_norm.max(dir.norm_l2());
        if p.record {
            w.log_x.push(w.x.clone());
            w.log_grad.push(grad);
            w.log_dir.push(dir.clone());
        }
        w.x.axpy(-p.gamma, &dir);
        if !w.x.is_finite() {
            return Err(EngineError::NonFiniteParameter {
                round: p.round,
                worker: w.id,
            });
        }
    }
    Ok(())
}

impl WorkerState {
    fn rng_grad<O: Objective + ?Sized>(&mut self, problem: &O) -> ParamVector {
        problem.stochastic_grad(self.id, &self.x, &mut self.rng)
    }
}

fn first_error(results: Vec<Result<(), EngineError>>) -> Result<(), EngineError> {
    results.into_iter().collect()
}

/// Runs `tau` steps `x <- x - gamma * d` on every worker from its current `x`.
pub fn local_phase<O: Objective + ?Sized>(
    workers: &mut [WorkerState],
    problem: &O,
    phase: &LocalPhase,
    exec: &dyn LocalExecutor,
) -> Result<(), EngineError> {
    let job = |w: &mut WorkerState| local_steps(w, problem, phase);
    first_error(exec.execute(workers, &job))
}

/// Componentwise mean in worker order.
pub fn all_reduce_mean(xs: &[ParamVector]) -> Result<ParamVector, EngineError> {
    ParamVector::mean_of(xs).map_err(|_| EngineError::Reduce)
}

/// Global sign-momentum step, in this order:
/// `delta = x - x_avg`,
/// `u = beta1 m + ((1 - beta1) / gamma) delta`,
/// `x <- x - eta gamma (S(u) + lambda x)` (decay on the pre-step `x`),
/// `m <- beta2 m + ((1 - beta2) / gamma) delta`.
pub fn global_sign_step(
    g: &mut GlobalState,
    x_avg: &ParamVector,
    gamma: f64,
    cfg: &HyperConfig,
    rng: &mut RngStream,
) -> Result<(), EngineError> {
    let delta = g.x.sub(x_avg);
    let c1 = (1.0 - cfg.beta1) / gamma;
    let u = g.m.zip_map(&delta, |m, d| cfg.beta1 * m + c1 * d);
    let s = cfg.sign_mode.apply(&u, rng)?;
    apply_sign_update(&mut g.x, &s, cfg.global_lr * gamma, cfg.weight_decay);
    let c2 = (1.0 - cfg.beta2) / gamma;
    g.m = g.m.zip_map(&delta, |m, d| cfg.beta2 * m + c2 * d);
    g.round += 1;
    Ok(())
}

/// `x <- x - step (s + lambda x)`
fn apply_sign_update(x: &mut ParamVector, s: &ParamVector, step: f64, lambda: f64) {
    for j in 0..x.len() {
        x[j] -= step * (s[j] + lambda * x[j]);
    }
}

/// Sign momentum on a gradient: `u = beta1 m + (1 - beta1) grad`, then the
/// same model and momentum updates as the global sign step.
pub fn sign_momentum_step(
    g: &mut GlobalState,
    grad: &ParamVector,
    gamma: f64,
    cfg: &HyperConfig,
    rng: &mut RngStream,
) -> Result<(), EngineError> {
    let u = g.m.zip_map(grad, |m, d| cfg.beta1 * m + (1.0 - cfg.beta1) * d);
    let s = cfg.sign_mode.apply(&u, rng)?;
    apply_sign_update(&mut g.x, &s, cfg.global_lr * gamma, cfg.weight_decay);
    g.m = g.m.zip_map(grad, |m, d| cfg.beta2 * m + (1.0 - cfg.beta2) * d);
    g.round += 1;
    Ok(())
}

/// `u <- beta u + delta / gamma`, `x <- x - alpha gamma u` with `alpha = global_lr`.
pub fn slowmo_step(g: &mut GlobalState, x_avg: &ParamVector, gamma: f64, cfg: &HyperConfig) {
    let delta = g.x.sub(x_avg);
    g.m = g.m.zip_map(&delta, |u, d| cfg.beta1 * u + d / gamma);
    g.x.axpy(-(cfg.global_lr * gamma), &g.m.clone());
    g.round += 1;
}

/// `u <- beta u + ((1 - beta) / gamma) sign(delta)`, `x <- x - eta gamma u`.
pub fn signed_slowmo_step(g: &mut GlobalState, x_avg: &ParamVector, gamma: f64, cfg: &HyperConfig) {
    let s = hard_sign(&g.x.sub(x_avg));
    let c = (1.0 - cfg.beta1) / gamma;
    g.m = g.m.zip_map(&s, |u, d| cfg.beta1 * u + c * d);
    g.x.axpy(-(cfg.global_lr * gamma), &g.m.clone());
    g.round += 1;
}

/// AdamW on the pseudo-gradient `delta / gamma`: `x <- x - eta (m_hat / (sqrt(v_hat) + eps) + lambda x)`.
pub fn global_adamw_step(g: &mut GlobalState, x_avg: &ParamVector, gamma: f64, cfg: &HyperConfig) {
    let pseudo = g.x.sub(x_avg).map(|d| d / gamma);
    let dir = g.adam.adamw_direction(&pseudo, &g.x);
    g.x.axpy(-cfg.global_lr, &dir);
    g.round += 1;
}

/// Runs a configuration to completion with workers executed sequentially.
pub fn run<O: Objective + ?Sized>(cfg: &HyperConfig, problem: &O) -> Result<RunTrace, EngineError> {
    run_with(cfg, problem, &Sequential)
}

/// Runs a configuration with the given executor for the local phases.
pub fn run_with<O: Objective + ?Sized>(
    cfg: &HyperConfig,
    problem: &O,
    exec: &dyn LocalExecutor,
) -> Result<RunTrace, EngineError> {
    cfg.validate()?;
    if problem.workers() != cfg.workers {
        return Err(EngineError::Config(format!(
            "problem has {} workers but the configuration asks for {}",
            problem.workers(),
            cfg.workers
        )));
    }
    let x0 = problem.initial_point();
    let dim = x0.len();
    let mut sim = Simulation {
        cfg,
        problem,
        exec,
        global: GlobalState::new(x0.clone(), cfg),
        workers: (0..cfg.workers)
            .map(|i| WorkerState::new(i, &x0, cfg.base, cfg.seed))
            .collect(),
        trace: RunTrace {
            meta: RunMeta {
                variant: cfg.variant,
                workers: cfg.workers,
                local_steps: cfg.local_steps,
                rounds: cfg.rounds,
                dim,
                global_lr: cfg.global_lr,
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                sign_bound: cfg.sign_mode.is_randomized().then_some(cfg.sign_mode.bound),
                seed: cfg.seed,
            },
            records: Vec::with_capacity(cfg.rounds as usize + 1),
            snapshots: Vec::new(),
            momentum_norms: Vec::with_capacity(cfg.rounds as usize + 1),
            inner_grad_sq: Vec::new(),
            debug: Vec::new(),
        },
    };
    sim.record(0, 0.0, 0.0)?;
    for t in 0..cfg.rounds {
        let gamma = cfg.gamma(t)?;
        let max_dir = match cfg.variant {
            Variant::FedMv => sim.fedmv_round(t, gamma)?,
            Variant::CentralizedSignSgdMomentum => sim.centralized_round(t, gamma)?,
            _ => sim.averaging_round(t, gamma)?,
        };
        for w in sim.workers.iter_mut() {
            w.x.clone_from(&sim.global.x);
        }
        sim.record(t + 1, gamma, max_dir)?;
    }
    Ok(sim.trace)
}

struct Simulation<'a, O: Objective + ?Sized> {
    cfg: &'a HyperConfig,
    problem: &'a O,
    exec: &'a dyn LocalExecutor,
    global: GlobalState,
    workers: Vec<WorkerState>,
    trace: RunTrace,
}

impl<O: Objective + ?Sized> Simulation<'_, O> {
    fn record(&mut self, round: u64, gamma: f64, max_dir_norm: f64) -> Result<(), EngineError> {
        let x = &self.global.x;
        let loss = self.problem.loss(x);
        if !loss.is_finite() {
            return Err(EngineError::NonFiniteLoss { round });
        }
        let grad = self.problem.full_grad(x);
        self.trace.records.push(RoundRecord {
            round,
            gamma,
            loss,
            grad_l1: grad.norm_l1(),
            grad_l2sq: grad.norm_l2_sq(),
            max_dir_norm,
            x_hash: x.content_hash(),
        });
        if x.len() <= SNAPSHOT_MAX_DIM {
            self.trace.snapshots.push(x.clone());
        }
        self.trace.momentum_norms.push(self.global.m.norm_l2());
        Ok(())
    }

    fn max_dir(&self) -> f64 {
        self.workers.iter().fold(0.0, |m, w| m.max(w.max_dir_norm))
    }

    fn capture_debug(&mut self, gamma: f64) -> Result<(), EngineError> {
        let tau = self.workers[0].log_dir.len();
        let mut mean_dirs = Vec::with_capacity(tau);
        for k in 0..tau {
            let dirs: Vec<ParamVector> = self.workers.iter().map(|w| w.log_dir[k].clone()).collect();
            mean_dirs.push(all_reduce_mean(&dirs)?);
        }
        self.trace.debug.push(RoundDebug {
            gamma,
            x_start: self.global.x.clone(),
            m_start: self.global.m.clone(),
            mean_dirs,
            worker0_grads: self.workers[0].log_grad.clone(),
            worker0_dirs: self.workers[0].log_dir.clone(),
        });
        Ok(())
    }

    fn capture_inner_metric(&mut self) -> Result<(), EngineError> {
        let tau = self.workers[0].log_x.len();
        let mut acc = 0.0;
        for k in 0..tau {
            let xs: Vec<ParamVector> = self.workers.iter().map(|w| w.log_x[k].clone()).collect();
            acc += self.problem.full_grad(&all_reduce_mean(&xs)?).norm_l2_sq();
        }
        self.trace.inner_grad_sq.push(acc / tau as f64);
        Ok(())
    }

    fn averaging_round(&mut self, t: u64, gamma: f64) -> Result<f64, EngineError> {
        let cfg = self.cfg;
        let inst = cfg.instrument;
        let phase = LocalPhase {
            gamma,
            tau: cfg.local_steps,
            seed: cfg.seed,
            round: t,
            record: inst.record_steps || inst.inner_grad_metric,
        };
        local_phase(&mut self.workers, self.problem, &phase, self.exec)?;
        let xs: Vec<ParamVector> = self.workers.iter().map(|w| w.x.clone()).collect();
        let x_avg = all_reduce_mean(&xs)?;
        if inst.record_steps {
            self.capture_debug(gamma)?;
        }
        if inst.inner_grad_metric {
            self.capture_inner_metric()?;
        }
        let g = &mut self.global;
        match cfg.variant {
            Variant::Dsm => {
                let mut rng = derive_stream(cfg.seed, 0, t as u32, Phase::GlobalSign);
                global_sign_step(g, &x_avg, gamma, cfg, &mut rng)?;
            }
            Variant::SlowMo => slowmo_step(g, &x_avg, gamma, cfg),
            Variant::SignedSlowMo => signed_slowmo_step(g, &x_avg, gamma, cfg),
            Variant::GlobalAdamW => global_adamw_step(g, &x_avg, gamma, cfg),
            Variant::LocalAvg => {
                g.x = x_avg;
                g.round += 1;
            }
            Variant::FedMv | Variant::CentralizedSignSgdMomentum => unreachable!("handled by dedicated rounds"),
        }
        if !g.x.is_finite() {
            return Err(EngineError::NonFiniteParameter { round: t, worker: 0 });
        }
        Ok(self.max_dir())
    }

    fn centralized_round(&mut self, t: u64, gamma: f64) -> Result<f64, EngineError> {
        let cfg = self.cfg;
        let problem = self.problem;
        let x = &self.global.x;
        let record = cfg.instrument.record_steps;
        let job = |w: &mut WorkerState| {
            w.rng = derive_stream(cfg.seed, w.id as u16, t as u32, Phase::Local);
            let grad = problem.stochastic_grad(w.id, x, &mut w.rng);
            w.max_dir_norm = grad.norm_l2();
            w.log_x.clear();
            w.log_grad.clear();
            w.log_dir.clear();
            if record {
                w.log_x.push(x.clone());
                w.log_grad.push(grad.clone());
                w.log_dir.push(grad.clone());
            }
            w.message = grad;
            Ok(())
        };
        first_error(self.exec.execute(&mut self.workers, &job))?;
        let grads: Vec<ParamVector> = self.workers.iter().map(|w| w.message.clone()).collect();
        let grad = all_reduce_mean(&grads)?;
        if record {
            self.capture_debug(gamma)?;
        }
        let mut rng = derive_stream(cfg.seed, 0, t as u32, Phase::GlobalSign);
        sign_momentum_step(&mut self.global, &grad, gamma, cfg, &mut rng)?;
        if !self.global.x.is_finite() {
            return Err(EngineError::NonFiniteParameter { round: t, worker: 0 });
        }
        Ok(self.max_dir())
    }

    fn fedmv_round(&mut self, t: u64, gamma: f64) -> Result<f64, EngineError> {
        let cfg = self.cfg;
        let problem = self.problem;
        let alpha = cfg.fedmv_alpha;
        let y = self.global.x.zip_map(&self.global.x_prev, |x, p| x + alpha * (x - p));
        let phase = LocalPhase {
            gamma,
            tau: cfg.local_steps,
            seed: cfg.seed,
            round: t,
            record: false,
        };
        let vote_mode = SignMode::randomized(SignVariant::RandomizedBipolar, cfg.fedmv_bound);
        let job = |w: &mut WorkerState| {
            w.x.clone_from(&y);
            local_steps(w, problem, &phase)?;
            let mut sample = derive_stream(cfg.seed, w.id as u16, t as u32, Phase::VoteSample);
            let grad = problem.stochastic_grad(w.id, &w.x, &mut sample);
            let b = cfg.beta1;
            w.vote_momentum = w.vote_momentum.zip_map(&grad, |m, g| b * m + (1.0 - b) * g);
            let mut compress = derive_stream(cfg.seed, w.id as u16, t as u32, Phase::VoteCompress);
            w.message = vote_mode.apply(&w.vote_momentum, &mut compress)?;
            Ok(())
        };
        first_error(self.exec.execute(&mut self.workers, &job))?;
        let votes: Vec<ParamVector> = self.workers.iter().map(|w| w.message.clone()).collect();
        let vote = majority_vote_sign(&votes)?;
        let g = &mut self.global;
        g.x_prev = g.x.clone();
        g.x.axpy(-cfg.global_lr, &vote);
        g.round += 1;
        Ok(self.max_dir())
    }
}

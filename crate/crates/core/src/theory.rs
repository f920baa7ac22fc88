//! Executable convergence bounds, constant estimation from traces, and rate fits.

use alloc::vec::Vec;
use thiserror::Error;

use crate::engine::{RoundDebug, RunTrace};
use crate::problems::{linalg::power_iteration, Objective, Problem};
use crate::rng::{derive_stream, Phase};
use crate::vector::ParamVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error("momentum coefficient must be below 1, got {0}")]
    BetaNotBelowOne(f64),
    #[error("round count must be at least 1")]
    ZeroRounds,
    #[error("rate fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("rate fit needs positive values, got {value} at index {index}")]
    NonPositive { index: usize, value: f64 },
    #[error("grid and metric lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("trace holds no records")]
    EmptyTrace,
}

/// Constants entering the bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremConstants {
    pub l: f64,
    pub r: f64,
    pub sigma: f64,
    pub zeta: f64,
    pub delta: f64,
    pub n: u64,
    pub tau: u64,
    pub t: u64,
    pub eta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub d: u64,
    pub f0_minus_fstar: f64,
}

/// Additive pieces of the randomized-sign bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomizedBoundTerms {
    /// `2 (f0 - f*) / sqrt(n tau T)`
    pub initial_gap: f64,
    /// `zeta^2 L sqrt(n / (tau T))`
    pub noise: f64,
    /// `(4 n L^2 zeta^2 / T) [(tau R / eta - 1)^2 + 2 beta^2 / (1 - beta^2)]`
    pub momentum: f64,
    /// `d L R^2 sqrt(n tau / T)`
    pub sign_variance: f64,
    /// `3 n tau^2 L^2 R^2 (sigma^2 + 3 tau delta^2) / (eta^2 T)`; zero for the general form.
    pub local_drift: f64,
}

impl RandomizedBoundTerms {
    pub fn total(&self) -> f64 {
        self.initial_gap + self.noise + self.momentum + self.sign_variance + self.local_drift
    }

    /// Terms decaying as `1/sqrt(T)`.
    pub fn sqrt_decaying(&self) -> f64 {
        self.initial_gap + self.noise + self.sign_variance
    }

    /// Terms decaying as `1/T`.
    pub fn linear_decaying(&self) -> f64 {
        self.momentum + self.local_drift
    }
}

fn check(c: &TheoremConstants) -> Result<(), TheoryError> {
    if c.beta >= 1.0 {
        return Err(TheoryError::BetaNotBelowOne(c.beta));
    }
    if c.t == 0 {
        return Err(TheoryError::ZeroRounds);
    }
    Ok(())
}

fn randomized_terms(c: &TheoremConstants, zeta: f64) -> Result<RandomizedBoundTerms, TheoryError> {
    check(c)?;
    let (n, tau, t, d) = (c.n as f64, c.tau as f64, c.t as f64, c.d as f64);
    let z2 = zeta * zeta;
    let lead = c.tau as f64 * c.r / c.eta - 1.0;
    Ok(RandomizedBoundTerms {
        initial_gap: 2.0 * c.f0_minus_fstar / libm::sqrt(n * tau * t),
        noise: z2 * c.l * libm::sqrt(n / (tau * t)),
        momentum: 4.0 * n * c.l * c.l * z2 / t * (lead * lead + 2.0 * c.beta * c.beta / (1.0 - c.beta * c.beta)),
        sign_variance: d * c.l * c.r * c.r * libm::sqrt(n * tau / t),
        local_drift: 0.0,
    })
}

/// General randomized-sign bound, excluding the base-optimizer bias term.
pub fn theorem1_terms(c: &TheoremConstants) -> Result<RandomizedBoundTerms, TheoryError> {
    randomized_terms(c, c.zeta)
}

pub fn theorem1_rhs(c: &TheoremConstants) -> Result<f64, TheoryError> {
    theorem1_terms(c).map(|t| t.total())
}

/// Smallest `T >= 4 n L^2 [4 (tau - 1)(tau R / eta - 1)^2 + 8 tau beta^2 / (1 - beta)^2 + 1]`.
pub fn theorem1_min_t(c: &TheoremConstants) -> Result<u64, TheoryError> {
    if c.beta >= 1.0 {
        return Err(TheoryError::BetaNotBelowOne(c.beta));
    }
    let tau = c.tau as f64;
    let lead = tau * c.r / c.eta - 1.0;
    let b = c.beta / (1.0 - c.beta);
    let bracket = 4.0 * (tau - 1.0) * lead * lead + 8.0 * tau * b * b + 1.0;
    let raw = 4.0 * c.n as f64 * c.l * c.l * bracket;
    Ok((libm::ceil(raw) as u64).max(1))
}

/// Randomized-sign bound with an SGD base: the general form with
/// `zeta := sigma`, plus the local drift term.
pub fn theorem2_terms(c: &TheoremConstants) -> Result<RandomizedBoundTerms, TheoryError> {
    let mut terms = randomized_terms(c, c.sigma)?;
    let (n, tau, t) = (c.n as f64, c.tau as f64, c.t as f64);
    let lr = c.l * c.r;
    terms.local_drift =
        3.0 * n * tau * tau * lr * lr * (c.sigma * c.sigma + 3.0 * tau * c.delta * c.delta) / (c.eta * c.eta * t);
    Ok(terms)
}

pub fn theorem2_rhs(c: &TheoremConstants) -> Result<f64, TheoryError> {
    theorem2_terms(c).map(|t| t.total())
}

/// Additive pieces of the hard-sign bound on the average `l1` gradient norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardSignBoundTerms {
    /// `L (f0 - f*) / (gamma T^(1/4))`
    pub initial_gap: f64,
    /// `2 sqrt(d) ||grad f(x0)|| / sqrt(T)`
    pub initial_grad: f64,
    /// `2 d gamma / T^(1/4)`
    pub step: f64,
    /// `(2 sigma / T^(1/4)) sqrt(d / (tau n))`
    pub noise: f64,
    /// `(sqrt(d) tau R + gamma d / 2) / T^(3/4)`
    pub drift: f64,
}

impl HardSignBoundTerms {
    pub fn total(&self) -> f64 {
        self.initial_gap + self.initial_grad + self.step + self.noise + self.drift
    }
}

pub fn theorem3_terms(c: &TheoremConstants, grad0_l2: f64) -> Result<HardSignBoundTerms, TheoryError> {
    if c.t == 0 {
        return Err(TheoryError::ZeroRounds);
    }
    let (n, tau, t, d) = (c.n as f64, c.tau as f64, c.t as f64, c.d as f64);
    let q = libm::pow(t, 0.25);
    let sd = libm::sqrt(d);
    Ok(HardSignBoundTerms {
        initial_gap: c.l * c.f0_minus_fstar / (c.gamma * q),
        initial_grad: 2.0 * sd * grad0_l2 / libm::sqrt(t),
        step: 2.0 * d * c.gamma / q,
        noise: 2.0 * c.sigma / q * libm::sqrt(d / (tau * n)),
        drift: (sd * tau * c.r + c.gamma * d / 2.0) / (q * q * q),
    })
}

pub fn theorem3_rhs(c: &TheoremConstants, grad0_l2: f64) -> Result<f64, TheoryError> {
    theorem3_terms(c, grad0_l2).map(|t| t.total())
}

/// Local learning rate `gamma = (R / eta) sqrt(n tau / T)` of the randomized-sign bound.
pub fn theorem1_gamma(r: f64, eta: f64, n: u64, tau: u64, t: u64) -> f64 {
    r / eta * libm::sqrt((n * tau) as f64 / t as f64)
}

/// `(eta, beta)` with `eta = 1 / (L T^(3/4))` and `1 - beta = 1 / sqrt(T)`.
pub fn theorem3_parameters(l: f64, t: u64) -> (f64, f64) {
    let t = t as f64;
    (1.0 / (l * libm::pow(t, 0.75)), 1.0 - 1.0 / libm::sqrt(t))
}

/// Least-squares slope of `ln(metric)` against `ln(T)`.
pub fn fit_rate(t_grid: &[u64], metric: &[f64]) -> Result<f64, TheoryError> {
    if t_grid.len() != metric.len() {
        return Err(TheoryError::LengthMismatch(t_grid.len(), metric.len()));
    }
    if metric.len() < 3 {
        return Err(TheoryError::TooFewPoints(metric.len()));
    }
    if let Some((index, &value)) = metric.iter().enumerate().find(|(_, &m)| !(m > 0.0)) {
        return Err(TheoryError::NonPositive { index, value });
    }
    let xs: Vec<f64> = t_grid.iter().map(|&t| libm::log(t as f64)).collect();
    let ys: Vec<f64> = metric.iter().map(|&m| libm::log(m)).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    Ok(sxy / sxx)
}

/// `(1/T) sum_t min_{s <= t} series[s]`.
pub fn time_average_of_running_min(series: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    let mut acc = 0.0;
    for &v in series {
        best = best.min(v);
        acc += best;
    }
    acc / series.len() as f64
}

/// Largest relative residual of `y_{t,k+1} = y_{t,k} - (eta gamma / (tau R)) d_{t,k}`
/// over all recorded rounds, where
/// `y_{t,k} = x_{t,0} - (eta gamma / (tau R (1 - beta))) [beta m_t + (1 - beta) sum_{i<k} d_{t,i}]`.
pub fn virtual_iterate_residual(debug: &[RoundDebug], eta: f64, beta: f64, r: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for round in debug {
        let tau = round.mean_dirs.len() as f64;
        let c = eta * round.gamma / (tau * r);
        let outer = c / (1.0 - beta);
        let mut partial = ParamVector::zeros(round.x_start.len());
        let y_at = |partial: &ParamVector| {
            let mut y = round.x_start.clone();
            let inner = round.m_start.zip_map(partial, |m, s| beta * m + (1.0 - beta) * s);
            y.axpy(-outer, &inner);
            y
        };
        let mut y = y_at(&partial);
        for d in &round.mean_dirs {
            partial.axpy(1.0, d);
            let next = y_at(&partial);
            let mut predicted = y.clone();
            predicted.axpy(-c, d);
            let scale = next.norm_l2().max(f64::MIN_POSITIVE);
            worst = worst.max(next.sub(&predicted).norm_l2() / scale);
            y = next;
        }
    }
    worst
}

/// Estimates the bound constants from a trace.
///
/// `L` is taken from the problem when known, otherwise from power iteration on
/// finite-difference Hessian-vector products at the initial point. `R` is the
/// largest recorded direction norm. `sigma` and `zeta` come from Monte Carlo at
/// up to eight evenly spaced trace snapshots with `samples` draws per worker;
/// `delta` is exact for quadratics and sampled at the same points otherwise.
pub fn estimate_constants(
    trace: &RunTrace,
    problem: &Problem,
    f_star: f64,
    samples: usize,
    seed: u64,
) -> Result<TheoremConstants, TheoryError> {
    let first = trace.records.first().ok_or(TheoryError::EmptyTrace)?;
    let x0 = trace.snapshots.first().cloned().unwrap_or_else(|| problem.initial_point());
    let l = problem.smoothness().unwrap_or_else(|| hessian_norm_estimate(problem, &x0));

    let points: Vec<ParamVector> = if trace.snapshots.is_empty() {
        alloc::vec![x0.clone()]
    } else {
        let k = trace.snapshots.len().min(8);
        (0..k)
            .map(|j| trace.snapshots[j * (trace.snapshots.len() - 1) / (k - 1).max(1)].clone())
            .collect()
    };
    let n = problem.workers();
    let mut sigma_sq: f64 = 0.0;
    let mut zeta_sq: f64 = 0.0;
    let mut delta_sq: f64 = 0.0;
    for (p, x) in points.iter().enumerate() {
        let exact: Vec<ParamVector> = (0..n).map(|i| problem.worker_grad(i, x)).collect();
        let full = ParamVector::mean_of(&exact).expect("at least one worker");
        let mut rngs: Vec<_> = (0..n)
            .map(|i| derive_stream(seed, i as u16, p as u32, Phase::Estimation))
            .collect();
        let mut per_worker = alloc::vec![0.0; n];
        let mut averaged = 0.0;
        for _ in 0..samples {
            let mut mean_err = ParamVector::zeros(x.len());
            for i in 0..n {
                let err = problem.stochastic_grad(i, x, &mut rngs[i]).sub(&exact[i]);
                per_worker[i] += err.norm_l2_sq();
                mean_err.axpy(1.0 / n as f64, &err);
            }
            averaged += mean_err.norm_l2_sq();
        }
        let s = samples.max(1) as f64;
        for v in &per_worker {
            sigma_sq = sigma_sq.max(v / s);
        }
        zeta_sq = zeta_sq.max(averaged / s);
        if problem.as_quadratic().is_none() {
            let het = exact.iter().map(|g| full.sub(g).norm_l2_sq()).sum::<f64>() / n as f64;
            delta_sq = delta_sq.max(het);
        }
    }
    if let Some(q) = problem.as_quadratic() {
        delta_sq = q.heterogeneity_delta_sq();
    }
    let gamma = trace.records.get(1).map(|r| r.gamma).unwrap_or(0.0);
    Ok(TheoremConstants {
        l,
        r: trace.max_dir_norm(),
        sigma: libm::sqrt(sigma_sq),
        zeta: libm::sqrt(zeta_sq),
        delta: libm::sqrt(delta_sq),
        n: trace.meta.workers as u64,
        tau: trace.meta.local_steps as u64,
        t: trace.meta.rounds,
        eta: trace.meta.global_lr,
        gamma,
        beta: trace.meta.beta1,
        d: trace.meta.dim as u64,
        f0_minus_fstar: (first.loss - f_star).max(0.0),
    })
}

/// `|lambda|_max` of the Hessian at `x` via central differences of the gradient.
fn hessian_norm_estimate(problem: &Problem, x: &ParamVector) -> f64 {
    let h = 1e-5;
    let lam = power_iteration(
        x.len(),
        |v| {
            let mut up = x.clone();
            up.axpy(h, v);
            let mut down = x.clone();
            down.axpy(-h, v);
            let hv = problem.full_grad(&up).sub(&problem.full_grad(&down)).scale(0.5 / h);
            // square the operator so power iteration sees a PSD map
            let mut up2 = x.clone();
            up2.axpy(h, &hv);
            let mut down2 = x.clone();
            down2.axpy(-h, &hv);
            problem.full_grad(&up2).sub(&problem.full_grad(&down2)).scale(0.5 / h)
        },
        1e-10,
        10_000,
    );
    libm::sqrt(lam.abs())
}

use std::sync::Mutex;

use dsm_core::base_opt::BaseOptParams;
use dsm_core::engine::{
    all_reduce_mean, global_sign_step, local_phase, run, run_with, EngineError, GlobalState, HyperConfig,
    LocalExecutor, LocalPhase, Sequential, Variant, WorkerJob, WorkerState,
};
use dsm_core::problems::linalg::SymMatrix;
use dsm_core::problems::{Objective, QuadraticProblem, QuadraticSpec};
use dsm_core::reductions::{replay, GradientStream, ReferenceKind, ReferenceLoop};
use dsm_core::rng::{derive_stream, Phase};
use dsm_core::schedule::Schedule;
use dsm_core::sign_ops::{SignMode, SignVariant};
use dsm_core::theory::virtual_iterate_residual;
use dsm_core::ParamVector;

struct Threaded;

impl LocalExecutor for Threaded {
    fn execute(&self, workers: &mut [WorkerState], job: &WorkerJob<'_>) -> Vec<Result<(), EngineError>> {
        std::thread::scope(|s| {
            let handles: Vec<_> = workers.iter_mut().map(|w| s.spawn(move || job(w))).collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    }
}

/// Records whether every worker holds the same model at the start of each round.
#[derive(Default)]
struct SyncSpy {
    starts: Mutex<Vec<ParamVector>>,
}

impl LocalExecutor for SyncSpy {
    fn execute(&self, workers: &mut [WorkerState], job: &WorkerJob<'_>) -> Vec<Result<(), EngineError>> {
        let first = workers[0].x.clone();
        for w in workers.iter() {
            assert_eq!(w.x.as_slice(), first.as_slice(), "worker {} out of sync", w.id);
        }
        self.starts.lock().unwrap().push(first);
        Sequential.execute(workers, job)
    }
}

fn scalar_problem(x0: f64) -> QuadraticProblem {
    QuadraticProblem::new(SymMatrix::identity(1), vec![[0.0].into()], 0.0, [x0].into()).unwrap()
}

fn noisy(workers: usize, seed: u64) -> QuadraticProblem {
    QuadraticProblem::generate(&QuadraticSpec {
        dim: 8,
        workers,
        noise_sigma: 0.5,
        delta_sq: 1.0,
        rotate: true,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn dsm(workers: usize, tau: usize, rounds: u64, gamma: f64) -> HyperConfig {
    let mut cfg = HyperConfig::new(Variant::Dsm, workers, tau, rounds);
    cfg.local_lr = Schedule::constant(gamma);
    cfg
}

#[test]
fn one_local_step_by_hand() {
    let p = scalar_problem(1.0);
    let mut ws = vec![WorkerState::new(0, &[1.0].into(), BaseOptParams::sgd(), 0)];
    let phase = LocalPhase {
        gamma: 0.5,
        tau: 1,
        seed: 0,
        round: 0,
        record: false,
    };
    local_phase(&mut ws, &p, &phase, &Sequential).unwrap();
    assert_eq!(ws[0].x, ParamVector::from([0.5]));
}

#[test]
fn zero_rate_leaves_workers_unchanged() {
    let p = noisy(3, 1);
    let x0 = p.initial_point();
    let mut ws: Vec<_> = (0..3).map(|i| WorkerState::new(i, &x0, BaseOptParams::sgd(), 5)).collect();
    let phase = LocalPhase {
        gamma: 0.0,
        tau: 4,
        seed: 5,
        round: 0,
        record: false,
    };
    local_phase(&mut ws, &p, &phase, &Sequential).unwrap();
    for w in &ws {
        assert_eq!(w.x, x0);
    }
}

#[test]
fn homogeneous_noiseless_workers_stay_identical() {
    let p = QuadraticProblem::generate(&QuadraticSpec {
        workers: 4,
        noise_sigma: 0.0,
        delta_sq: 0.0,
        ..Default::default()
    })
    .unwrap();
    let x0 = p.initial_point();
    let mut ws: Vec<_> = (0..4).map(|i| WorkerState::new(i, &x0, BaseOptParams::sgd(), 0)).collect();
    let phase = LocalPhase {
        gamma: 0.1,
        tau: 6,
        seed: 0,
        round: 0,
        record: false,
    };
    local_phase(&mut ws, &p, &phase, &Sequential).unwrap();
    for w in &ws[1..] {
        assert_eq!(w.x.as_slice(), ws[0].x.as_slice());
    }
}

#[test]
fn all_reduce_examples() {
    let v = ParamVector::from([0.1, 0.7, -1.3]);
    assert_eq!(all_reduce_mean(&vec![v.clone(); 7]).unwrap(), v);
    assert_eq!(
        all_reduce_mean(&[[0.0].into(), [2.0].into()]).unwrap(),
        ParamVector::from([1.0])
    );
    assert!(all_reduce_mean(&[]).is_err());

    let mut rng = derive_stream(9, 0, 0, Phase::Check);
    let xs: Vec<ParamVector> = (0..8)
        .map(|_| ParamVector::from((0..16).map(|_| rng.standard_normal()).collect::<Vec<_>>()))
        .collect();
    let mean = all_reduce_mean(&xs).unwrap();
    for j in 0..16 {
        let reference: f64 = xs.iter().map(|x| x[j]).sum::<f64>() / 8.0;
        let ulp = f64::EPSILON * reference.abs().max(f64::MIN_POSITIVE);
        assert!((mean[j] - reference).abs() <= 16.0 * ulp);
    }
}

fn scalar_global(x: f64) -> (GlobalState, HyperConfig) {
    let mut cfg = dsm(1, 1, 1, 0.5);
    cfg.beta1 = 0.95;
    cfg.beta2 = 0.98;
    (GlobalState::new([x].into(), &cfg), cfg)
}

#[test]
fn global_step_fixed_point() {
    let (mut g, cfg) = scalar_global(1.0);
    let mut rng = derive_stream(0, 0, 0, Phase::GlobalSign);
    global_sign_step(&mut g, &[1.0].into(), 0.5, &cfg, &mut rng).unwrap();
    assert_eq!(g.x, ParamVector::from([1.0]));
    assert_eq!(g.m, ParamVector::from([0.0]));
}

#[test]
fn global_step_by_hand() {
    let (mut g, cfg) = scalar_global(1.0);
    let mut rng = derive_stream(0, 0, 0, Phase::GlobalSign);
    global_sign_step(&mut g, &[0.5].into(), 0.5, &cfg, &mut rng).unwrap();
    // u = 0.1 * 0.5 = 0.05 > 0, x = 1 - 0.5, m = (0.02 / 0.5) * 0.5
    assert_eq!(g.x, ParamVector::from([0.5]));
    assert!((g.m[0] - 0.02).abs() < 1e-15);

    let (mut g, mut cfg) = scalar_global(1.0);
    cfg.weight_decay = 0.1;
    global_sign_step(&mut g, &[0.5].into(), 0.5, &cfg, &mut rng).unwrap();
    assert!((g.x[0] - 0.45).abs() < 1e-15);
}

#[test]
fn randomized_sign_bound_violation_aborts() {
    let (mut g, mut cfg) = scalar_global(10.0);
    cfg.sign_mode = SignMode::randomized(SignVariant::RandomizedBipolar, 1.0);
    let mut rng = derive_stream(0, 0, 0, Phase::GlobalSign);
    let err = global_sign_step(&mut g, &[0.0].into(), 0.5, &cfg, &mut rng).unwrap_err();
    assert!(matches!(err, EngineError::Sign(_)));
}

#[test]
fn trace_has_one_record_per_round_plus_initial() {
    let p = noisy(2, 0);
    let t = run(&dsm(2, 3, 7, 0.05), &p).unwrap();
    assert_eq!(t.records.len(), 8);
    assert_eq!(t.records[0].gamma, 0.0);
    assert_eq!(t.records[0].max_dir_norm, 0.0);
    assert!(t.records[1..].iter().all(|r| r.gamma == 0.05 && r.max_dir_norm > 0.0));
    assert_eq!(t.snapshots.len(), 8);
}

#[test]
fn every_variant_runs_deterministically() {
    let p = noisy(3, 2);
    for v in Variant::ALL {
        let mut cfg = dsm(3, 4, 20, 0.05);
        cfg.variant = v;
        cfg.fedmv_bound = 100.0;
        cfg.beta1 = 0.9;
        cfg.global_lr = if v == Variant::FedMv { 0.01 } else { 1.0 };
        let a = run(&cfg, &p).unwrap();
        let b = run(&cfg, &p).unwrap();
        assert_eq!(a, b, "{}", v.name());
        assert_eq!(Variant::from_name(v.name()).unwrap(), v);
    }
    assert!(matches!(Variant::from_name("dsmm"), Err(EngineError::Config(_))));
}

#[test]
fn workers_resynchronize_every_round() {
    let p = noisy(4, 3);
    for v in [Variant::Dsm, Variant::SlowMo, Variant::GlobalAdamW, Variant::LocalAvg] {
        let mut cfg = dsm(4, 3, 10, 0.05);
        cfg.variant = v;
        let spy = SyncSpy::default();
        let t = run_with(&cfg, &p, &spy).unwrap();
        let starts = spy.starts.into_inner().unwrap();
        assert_eq!(starts.len(), 10);
        for (k, x) in starts.iter().enumerate() {
            assert_eq!(x, &t.snapshots[k]);
        }
    }
}

#[test]
fn parallel_matches_sequential() {
    let p = QuadraticProblem::generate(&QuadraticSpec {
        dim: 16,
        workers: 16,
        noise_sigma: 1.0,
        ..Default::default()
    })
    .unwrap();
    for variant in [Variant::Dsm, Variant::FedMv] {
        let mut cfg = dsm(16, 12, 100, 0.01);
        cfg.variant = variant;
        cfg.fedmv_bound = 1e3;
        cfg.beta1 = 0.9;
        cfg.seed = 77;
        let a = run_with(&cfg, &p, &Sequential).unwrap();
        let b = run_with(&cfg, &p, &Threaded).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.snapshots.last(), b.snapshots.last());
    }
}

#[test]
fn homogeneous_noiseless_collapse_to_one_worker() {
    let one = QuadraticProblem::generate(&QuadraticSpec {
        dim: 6,
        workers: 1,
        noise_sigma: 0.0,
        seed: 4,
        rotate: true,
        ..Default::default()
    })
    .unwrap();
    let many = QuadraticProblem::new(
        one.curvature().clone(),
        vec![one.centers()[0].clone(); 5],
        0.0,
        one.initial_point(),
    )
    .unwrap();
    let a = run(&dsm(5, 4, 30, 0.05), &many).unwrap();
    let b = run(&dsm(1, 4, 30, 0.05), &one).unwrap();
    assert_eq!(a.records, b.records);
}

#[test]
fn dsm_single_step_is_sign_sgd_with_momentum() {
    for seed in 0..5u64 {
        for (beta, eta, gamma) in [(0.0, 1.0, 0.05), (0.9, 0.5, 0.02), (0.99, 2.0, 0.01)] {
            let p = noisy(1, seed);
            let mut cfg = dsm(1, 1, 60, gamma);
            cfg.beta1 = beta;
            cfg.beta2 = beta;
            cfg.global_lr = eta;
            cfg.seed = seed;
            cfg.instrument.record_steps = true;
            let engine = run(&cfg, &p).unwrap();

            let grads: Vec<_> = engine.debug.iter().flat_map(|r| r.worker0_grads.clone()).collect();
            let reference = ReferenceLoop {
                kind: ReferenceKind::SignSgdMomentum { beta, lr: eta * gamma },
                x0: p.initial_point(),
            };
            let out = replay(&reference, &mut GradientStream::new(grads), 60).unwrap();
            assert_eq!(out.trajectory, engine.snapshots);

            let mut central = cfg.clone();
            central.variant = Variant::CentralizedSignSgdMomentum;
            assert_eq!(run(&central, &p).unwrap().snapshots, engine.snapshots);
        }
    }
}

#[test]
fn dsm_single_worker_is_signed_lookahead() {
    for seed in 0..5u64 {
        for (beta, eta, gamma, tau) in [(0.0, 1.0, 0.05, 4), (0.9, 0.5, 0.02, 8), (0.95, 1.5, 0.01, 3)] {
            let p = noisy(1, seed);
            let mut cfg = dsm(1, tau, 40, gamma);
            cfg.beta1 = beta;
            cfg.beta2 = beta;
            cfg.global_lr = eta;
            cfg.seed = seed;
            cfg.instrument.record_steps = true;
            let engine = run(&cfg, &p).unwrap();
            let grads: Vec<_> = engine.debug.iter().flat_map(|r| r.worker0_grads.clone()).collect();
            let reference = ReferenceLoop {
                kind: ReferenceKind::SignedLookahead {
                    inner: tau,
                    inner_lr: gamma,
                    outer_lr: eta,
                    beta,
                },
                x0: p.initial_point(),
            };
            let out = replay(&reference, &mut GradientStream::new(grads), 40).unwrap();
            assert_eq!(out.trajectory, engine.snapshots);
        }
    }
}

#[test]
fn local_lion_matches_reference_lion() {
    let p = noisy(1, 6);
    let mut cfg = dsm(1, 1, 50, 0.01);
    cfg.variant = Variant::LocalAvg;
    cfg.base = BaseOptParams::lion(0.9, 0.99, 0.1);
    cfg.instrument.record_steps = true;
    let engine = run(&cfg, &p).unwrap();
    let grads: Vec<_> = engine.debug.iter().flat_map(|r| r.worker0_grads.clone()).collect();
    let reference = ReferenceLoop {
        kind: ReferenceKind::Lion {
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.1,
            lr: 0.01,
        },
        x0: p.initial_point(),
    };
    let out = replay(&reference, &mut GradientStream::new(grads), 50).unwrap();
    assert_eq!(out.trajectory, engine.snapshots);
}

#[test]
fn slowmo_without_momentum_is_local_averaging() {
    let p = noisy(4, 8);
    let mut slow = dsm(4, 1, 50, 0.05);
    slow.variant = Variant::SlowMo;
    slow.beta1 = 0.0;
    slow.global_lr = 1.0;
    let mut avg = slow.clone();
    avg.variant = Variant::LocalAvg;
    let a = run(&slow, &p).unwrap();
    let b = run(&avg, &p).unwrap();
    for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
        assert!(x.sub(y).norm_inf() <= 1e-12 * (1.0 + y.norm_inf()));
    }
}

#[test]
fn momentum_stays_within_tau_r() {
    for tau in [4usize, 12] {
        for seed in 0..20u64 {
            let p = noisy(4, seed);
            let mut cfg = dsm(4, tau, 40, 0.02);
            cfg.seed = seed;
            let t = run(&cfg, &p).unwrap();
            let r_hat = t.max_dir_norm();
            assert!(t.max_momentum_norm() <= tau as f64 * r_hat * (1.0 + 1e-12));
        }
    }
}

#[test]
fn virtual_iterates_follow_their_recursion() {
    let p = noisy(4, 1);
    let mut cfg = dsm(4, 8, 50, 0.01);
    cfg.beta1 = 0.9;
    cfg.beta2 = 0.9;
    let r = 20.0;
    cfg.sign_mode = SignMode::randomized(SignVariant::RandomizedBipolar, 8.0 * r);
    cfg.instrument.record_steps = true;
    let t = run(&cfg, &p).unwrap();
    assert_eq!(t.debug.len(), 50);
    assert!(t.max_dir_norm() <= r);
    assert!(virtual_iterate_residual(&t.debug, cfg.global_lr, 0.9, r) < 1e-10);
}

#[test]
fn divergence_is_reported_with_its_round() {
    let p = noisy(2, 0);
    let mut cfg = dsm(2, 4, 200, 1e3);
    cfg.variant = Variant::LocalAvg;
    let err = run(&cfg, &p).unwrap_err();
    assert!(matches!(
        err,
        EngineError::NonFiniteParameter { .. } | EngineError::NonFiniteLoss { .. }
    ));
}

#[test]
fn invalid_configurations_are_rejected() {
    let p = noisy(2, 0);
    let mut cfg = dsm(3, 1, 5, 0.1);
    assert!(matches!(run(&cfg, &p), Err(EngineError::Config(_))));
    cfg.workers = 2;
    cfg.beta1 = 1.5;
    assert!(matches!(run(&cfg, &p), Err(EngineError::Config(_))));
    cfg.beta1 = 0.9;
    cfg.local_lr = Schedule::cosine(0.1, 0, 3, 0.0);
    assert!(matches!(run(&cfg, &p), Err(EngineError::Config(_))));
}

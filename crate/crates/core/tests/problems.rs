use dsm_core::engine::{run, HyperConfig, Variant};
use dsm_core::problems::linalg::SymMatrix;
use dsm_core::problems::{
    heterogeneity_delta_sq, LogisticProblem, LogisticSpec, MlpProblem, MlpSpec, Objective, Problem, QuadraticProblem,
    QuadraticSpec,
};
use dsm_core::rng::{derive_stream, Phase};
use dsm_core::schedule::Schedule;
use dsm_core::theory::estimate_constants;
use dsm_core::ParamVector;

const DRAWS: usize = 100_000;

fn quadratic(sigma: f64, workers: usize) -> QuadraticProblem {
    QuadraticProblem::generate(&QuadraticSpec {
        dim: 8,
        workers,
        noise_sigma: sigma,
        rotate: true,
        seed: 2,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn quadratic_noise_has_declared_variance() {
    let p = quadratic(0.1, 2);
    let d = p.dim();
    let x = p.initial_point();
    let exact = p.worker_grad(1, &x);
    let mut rng = derive_stream(1, 1, 0, Phase::Check);
    let mut sq = ParamVector::zeros(d);
    for _ in 0..DRAWS {
        let e = p.stochastic_grad(1, &x, &mut rng).sub(&exact);
        sq = sq.zip_map(&e, |a, b| a + b * b);
    }
    let target = 0.01 / d as f64;
    for j in 0..d {
        let var = sq[j] / DRAWS as f64;
        assert!((var - target).abs() < 0.05 * target, "component {j}: {var} vs {target}");
    }
}

#[test]
fn worker_averaged_noise_variance_is_sigma_sq_over_n() {
    let n = 4;
    let p = quadratic(0.5, n);
    let x = p.initial_point();
    let exact = p.full_grad(&x);
    let mut rngs: Vec<_> = (0..n).map(|i| derive_stream(3, i as u16, 0, Phase::Check)).collect();
    let mut acc = 0.0;
    for _ in 0..DRAWS {
        let gs: Vec<_> = (0..n).map(|i| p.stochastic_grad(i, &x, &mut rngs[i])).collect();
        acc += ParamVector::mean_of(&gs).unwrap().sub(&exact).norm_l2_sq();
    }
    let var = acc / DRAWS as f64;
    let target = 0.25 / n as f64;
    assert!((var - target).abs() < 0.05 * target, "{var}");
}

fn assert_unbiased(p: &dyn Objective, worker: usize) {
    let d = p.dim();
    let mut rng = derive_stream(5, worker as u16, 0, Phase::Check);
    let x = {
        let mut r = derive_stream(6, 0, 0, Phase::Check);
        ParamVector::from((0..d).map(|_| 0.3 * r.standard_normal()).collect::<Vec<_>>())
    };
    let exact = p.worker_grad(worker, &x);
    let mut sum = ParamVector::zeros(d);
    let mut sq = ParamVector::zeros(d);
    for _ in 0..DRAWS {
        let g = p.stochastic_grad(worker, &x, &mut rng);
        sum.axpy(1.0, &g);
        sq = sq.zip_map(&g, |a, b| a + b * b);
    }
    let n = DRAWS as f64;
    for j in 0..d {
        let mean = sum[j] / n;
        let var = (sq[j] / n - mean * mean).max(0.0);
        let se = (var / n).sqrt();
        assert!(
            (mean - exact[j]).abs() <= 4.0 * se + 1e-12,
            "component {j}: {mean} vs {} (se {se})",
            exact[j]
        );
    }
}

#[test]
fn stochastic_gradients_are_unbiased() {
    assert_unbiased(&quadratic(0.5, 3), 2);
    let logistic = LogisticProblem::generate(&LogisticSpec {
        dim: 8,
        workers: 3,
        samples_per_worker: 64,
        ..Default::default()
    })
    .unwrap();
    assert_unbiased(&logistic, 1);
    let mlp = MlpProblem::generate(&MlpSpec {
        input: 3,
        hidden: 4,
        workers: 2,
        samples_per_worker: 32,
        ..Default::default()
    })
    .unwrap();
    assert_unbiased(&mlp, 0);
}

#[test]
fn full_gradient_is_the_bitwise_worker_mean() {
    let p = Problem::Logistic(LogisticProblem::generate(&LogisticSpec::default()).unwrap());
    let x = ParamVector::filled(p.dim(), 0.1);
    let grads: Vec<_> = (0..p.workers()).map(|i| p.worker_grad(i, &x)).collect();
    assert_eq!(p.full_grad(&x), ParamVector::mean_of(&grads).unwrap());
    let q = quadratic(0.0, 3);
    assert!(q.full_grad(q.optimum()).norm_inf() < 1e-12);
}

#[test]
fn logistic_smoothness_bound_dominates_curvature() {
    let p = LogisticProblem::generate(&LogisticSpec {
        dim: 6,
        workers: 2,
        samples_per_worker: 50,
        ..Default::default()
    })
    .unwrap();
    let l = p.smoothness().unwrap();
    // directional second differences never exceed L
    let mut rng = derive_stream(1, 0, 0, Phase::Check);
    for _ in 0..20 {
        let x = ParamVector::from((0..6).map(|_| rng.standard_normal()).collect::<Vec<_>>());
        let v = ParamVector::from((0..6).map(|_| rng.standard_normal()).collect::<Vec<_>>());
        let v = v.scale(1.0 / v.norm_l2());
        let h = 1e-4;
        let mut up = x.clone();
        up.axpy(h, &v);
        let mut down = x.clone();
        down.axpy(-h, &v);
        let curv = (p.loss(&up) - 2.0 * p.loss(&x) + p.loss(&down)) / (h * h);
        assert!(curv <= l * (1.0 + 1e-4), "{curv} > {l}");
    }
}

fn short_trace(p: &Problem) -> dsm_core::engine::RunTrace {
    let mut cfg = HyperConfig::new(Variant::Dsm, p.workers(), 2, 10);
    cfg.local_lr = Schedule::constant(0.05);
    run(&cfg, p).unwrap()
}

#[test]
fn estimated_constants() {
    let diag = Problem::Quadratic(
        QuadraticProblem::new(
            SymMatrix::diagonal(&[1.0, 4.0]),
            vec![[0.0, 0.0].into(), [0.0, 0.0].into()],
            0.1,
            [1.0, 1.0].into(),
        )
        .unwrap(),
    );
    let t = short_trace(&diag);
    let c = estimate_constants(&t, &diag, 0.0, DRAWS, 0).unwrap();
    assert!((c.l - 4.0).abs() < 1e-10);
    assert_eq!(c.delta, 0.0);
    assert!((0.095..=0.105).contains(&c.sigma), "{}", c.sigma);
    assert_eq!(c.r, t.max_dir_norm());
    assert_eq!(heterogeneity_delta_sq(&diag).unwrap(), 0.0);

    let again = estimate_constants(&t, &diag, 0.0, 1000, 0).unwrap();
    assert_eq!(again, estimate_constants(&t, &diag, 0.0, 1000, 0).unwrap());
}

#[test]
fn estimated_smoothness_without_closed_form() {
    let mlp = Problem::Mlp(MlpProblem::generate(&MlpSpec::default()).unwrap());
    let t = short_trace(&mlp);
    let c = estimate_constants(&t, &mlp, 0.0, 10, 0).unwrap();
    assert!(c.l.is_finite() && c.l > 0.0);
    assert!(c.delta > 0.0);
}

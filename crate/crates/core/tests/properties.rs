use approx::assert_relative_eq;
use proptest::prelude::*;

use dsm_core::base_opt::{BaseOptParams, BaseOptState};
use dsm_core::engine::{run, HyperConfig, Variant};
use dsm_core::problems::{Objective, QuadraticProblem, QuadraticSpec};
use dsm_core::rng::{derive_stream, Phase};
use dsm_core::schedule::Schedule;
use dsm_core::sign_ops::{hard_sign, randomized_sign, SignMode, SignVariant};
use dsm_core::theory::{fit_rate, theorem1_rhs, theorem2_rhs, theorem3_rhs, TheoremConstants};
use dsm_core::ParamVector;

fn vector(max_len: usize) -> impl Strategy<Value = ParamVector> {
    prop::collection::vec(-1e3f64..1e3, 1..max_len).prop_map(ParamVector::from)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hard_sign_ignores_positive_scaling(v in vector(32), c in 1e-6f64..1e6) {
        prop_assert_eq!(hard_sign(&v.scale(c)), hard_sign(&v));
    }

    #[test]
    fn randomized_sign_outputs_are_ternary(v in vector(32), slack in 1.0f64..4.0, seed in any::<u64>(), sparse in any::<bool>()) {
        let variant = if sparse { SignVariant::RandomizedSparse } else { SignVariant::RandomizedBipolar };
        let bound = v.norm_l2().max(1e-300) * slack;
        let mode = SignMode::randomized(variant, bound);
        let mut rng = derive_stream(seed, 0, 0, Phase::Check);
        let s = randomized_sign(&v, &mode, &mut rng).unwrap();
        for j in 0..v.len() {
            prop_assert!(s[j] == -1.0 || s[j] == 0.0 || s[j] == 1.0);
            if v[j] == 0.0 {
                prop_assert_eq!(s[j], 0.0);
            }
            if sparse && s[j] != 0.0 {
                prop_assert_eq!(s[j], v[j].signum());
            }
        }
    }

    #[test]
    fn randomized_sign_is_reproducible(v in vector(16), seed in any::<u64>(), round in any::<u32>()) {
        let mode = SignMode::randomized(SignVariant::RandomizedBipolar, v.norm_l2() + 1.0);
        let a = randomized_sign(&v, &mode, &mut derive_stream(seed, 3, round, Phase::GlobalSign)).unwrap();
        let b = randomized_sign(&v, &mode, &mut derive_stream(seed, 3, round, Phase::GlobalSign)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mean_is_bounded_by_extremes(xs in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 4), 1..10)) {
        let vs: Vec<ParamVector> = xs.iter().cloned().map(ParamVector::from).collect();
        let m = ParamVector::mean_of(&vs).unwrap();
        for j in 0..4 {
            let lo = xs.iter().map(|x| x[j]).fold(f64::INFINITY, f64::min);
            let hi = xs.iter().map(|x| x[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m[j] >= lo - 1e-9 && m[j] <= hi + 1e-9);
        }
    }

    #[test]
    fn mean_of_copies_is_exact(v in vector(16), n in 1usize..20) {
        prop_assert_eq!(ParamVector::mean_of(&vec![v.clone(); n]).unwrap(), v);
    }

    #[test]
    fn cosine_rate_stays_in_range(peak in 1e-6f64..1.0, warmup in 0u64..500, extra in 1u64..5000, floor in 0.0f64..1.0, frac in 0.0f64..1.0) {
        let total = warmup + extra;
        let s = Schedule::cosine(peak, warmup, total, floor);
        let step = (frac * total as f64) as u64;
        let r = s.rate(step).unwrap();
        prop_assert!((0.0..=peak * (1.0 + 1e-12)).contains(&r));
        if step >= warmup {
            prop_assert!(r >= floor * peak * (1.0 - 1e-12));
        }
    }

    #[test]
    fn lion_direction_is_a_sign_without_decay(gs in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..20)) {
        let mut s = BaseOptState::new(BaseOptParams::lion(0.9, 0.99, 0.0), 3);
        for g in gs {
            let d = s.lion_direction(&ParamVector::from(g), &ParamVector::zeros(3));
            prop_assert!(d.iter().all(|&v| v == -1.0 || v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn bounds_never_increase_with_rounds(
        l in 0.1f64..4.0, r in 0.1f64..4.0, sigma in 0.0f64..2.0, delta in 0.0f64..2.0,
        n in 1u64..16, tau in 1u64..16, eta in 0.1f64..4.0, beta in 0.0f64..0.99, d in 1u64..64,
    ) {
        let base = TheoremConstants {
            l, r, sigma, zeta: sigma, delta, n, tau, t: 1, eta, gamma: 0.1, beta, d, f0_minus_fstar: 1.0,
        };
        let mut prev = [f64::INFINITY; 3];
        for k in 0..24 {
            let c = TheoremConstants { t: 1 << k, ..base };
            let cur = [theorem1_rhs(&c).unwrap(), theorem2_rhs(&c).unwrap(), theorem3_rhs(&c, 1.0).unwrap()];
            for j in 0..3 {
                prop_assert!(cur[j] <= prev[j] * (1.0 + 1e-12));
            }
            prev = cur;
        }
    }

    #[test]
    fn fit_rate_recovers_power_laws(p in -2.0f64..2.0, c in 1e-3f64..1e3) {
        let ts = [16u64, 256, 4096];
        let m: Vec<f64> = ts.iter().map(|&t| c * (t as f64).powf(p)).collect();
        assert_relative_eq!(fit_rate(&ts, &m).unwrap(), p, epsilon = 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn momentum_is_bounded_by_tau_r(seed in any::<u64>(), tau in 1usize..10, beta in 0.0f64..1.0, workers in 1usize..5) {
        let p = QuadraticProblem::generate(&QuadraticSpec {
            dim: 6,
            workers,
            noise_sigma: 0.3,
            seed,
            ..Default::default()
        })
        .unwrap();
        let mut cfg = HyperConfig::new(Variant::Dsm, workers, tau, 25);
        cfg.local_lr = Schedule::constant(0.03);
        cfg.beta1 = beta;
        cfg.beta2 = beta;
        cfg.seed = seed;
        let t = run(&cfg, &p).unwrap();
        prop_assert!(t.max_momentum_norm() <= tau as f64 * t.max_dir_norm() * (1.0 + 1e-12));
    }

    #[test]
    fn heterogeneity_is_independent_of_the_point(seed in any::<u64>(), shift in -10.0f64..10.0) {
        let p = QuadraticProblem::generate(&QuadraticSpec { dim: 5, workers: 3, rotate: true, seed, ..Default::default() }).unwrap();
        let x = p.initial_point().map(|v| v + shift);
        let full = p.full_grad(&x);
        let het: f64 = (0..3).map(|i| full.sub(&p.worker_grad(i, &x)).norm_l2_sq()).sum::<f64>() / 3.0;
        assert_relative_eq!(het, p.heterogeneity_delta_sq(), max_relative = 1e-8);
    }
}

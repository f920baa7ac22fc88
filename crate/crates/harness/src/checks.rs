//! Checks that need no experiment config: the randomized-sign moments, the
//! reduction identities, the gradient oracles, and byte-level determinism of
//! a config's trace files.

use std::fs;
use std::path::PathBuf;

use dsm_core::base_opt::BaseOptParams;
use dsm_core::engine::{run, HyperConfig, RunTrace, Variant};
use dsm_core::problems::{
    finite_difference_check, LogisticProblem, LogisticSpec, MlpProblem, MlpSpec, Objective, Problem, QuadraticProblem,
    QuadraticSpec,
};
use dsm_core::reductions::{replay, GradientStream, ReferenceKind, ReferenceLoop};
use dsm_core::rng::{derive_stream, Phase};
use dsm_core::schedule::Schedule;
use dsm_core::sign_ops::{randomized_sign, randomized_sign_component_variance, SignMode, SignVariant};
use dsm_core::ParamVector;
use serde_json::json;

use crate::config::ExperimentSpec;
use crate::error::HarnessError;
use crate::experiment::{run_experiment, CheckReport, RunOptions};

/// Monte Carlo check of the randomized sign operators on `vectors` random
/// vectors in dimension 16 with `||v|| <= B = 1`: every component mean within
/// four exact standard errors of `v_j / B`, and `E||S(v) - v/B||^2` within 1%
/// of its closed form, which must not exceed `d`.
pub fn check_lemma1(seed: u64, vectors: usize, draws: usize) -> CheckReport {
    const D: usize = 16;
    let bound = 1.0;
    let mut gen = derive_stream(seed, 0, 0, Phase::Check);
    let mut passed = true;
    let mut lines = Vec::new();
    let mut doc = Vec::new();
    for k in 0..vectors {
        let raw = ParamVector::from((0..D).map(|_| gen.standard_normal()).collect::<Vec<_>>());
        // the first vector sits on the boundary ||v|| = B
        let radius = if k == 0 { bound } else { bound * (0.05 + 0.95 * gen.uniform()) };
        let mut v = raw.scale(radius / raw.norm_l2());
        if k == 1 {
            v.as_mut_slice()[3] = 0.0;
        }
        let p = v.scale(1.0 / bound);
        for variant in [SignVariant::RandomizedBipolar, SignVariant::RandomizedSparse] {
            let mode = SignMode::randomized(variant, bound);
            let mut rng = derive_stream(seed, k as u16 + 1, variant as u32, Phase::Check);
            let mut sum = vec![0.0; D];
            let mut err_sq = 0.0;
            for _ in 0..draws {
                let s = randomized_sign(&v, &mode, &mut rng).expect("||v|| <= B");
                for j in 0..D {
                    sum[j] += s[j];
                    let e = s[j] - p[j];
                    err_sq += e * e;
                }
            }
            let n = draws as f64;
            let mut worst_z: f64 = 0.0;
            let mut means_ok = true;
            for j in 0..D {
                let mean = sum[j] / n;
                let se = (randomized_sign_component_variance(v[j], variant, bound) / n).sqrt();
                let dev = (mean - p[j]).abs();
                if se == 0.0 {
                    means_ok &= dev == 0.0;
                } else {
                    worst_z = worst_z.max(dev / se);
                    means_ok &= dev <= 4.0 * se;
                }
            }
            let norm_sq = p.norm_l2_sq();
            let closed = match variant {
                SignVariant::RandomizedBipolar => v.count_nonzero() as f64 - norm_sq,
                _ => p.norm_l1() - norm_sq,
            };
            let empirical = err_sq / n;
            let rel = (empirical - closed).abs() / closed;
            let ok = means_ok && rel <= 0.01 && closed <= D as f64;
            passed &= ok;
            let name = if variant == SignVariant::RandomizedBipolar { "bipolar" } else { "sparse" };
            lines.push(format!(
                "vector {k} {name}: max |z| {worst_z:.2}, second moment {empirical:.5} vs {closed:.5} ({:.3}%): {}",
                100.0 * rel,
                if ok { "ok" } else { "violated" }
            ));
            doc.push(json!({
                "vector": k, "variant": name, "max_z": worst_z, "empirical": empirical, "closed_form": closed,
                "relative_error": rel, "passed": ok,
            }));
        }
    }
    CheckReport {
        name: "lemma1".into(),
        passed,
        lines,
        json: json!({ "check": "lemma1", "passed": passed, "draws": draws, "dim": D, "bound": bound, "cases": doc }),
    }
}

fn reduction_problem(seed: u64) -> QuadraticProblem {
    QuadraticProblem::generate(&QuadraticSpec {
        dim: 8,
        workers: 1,
        noise_sigma: 0.5,
        rotate: true,
        seed,
        ..Default::default()
    })
    .expect("valid spec")
}

fn recorded_grads(trace: &RunTrace) -> GradientStream {
    GradientStream::new(trace.debug.iter().flat_map(|r| r.worker0_grads.iter().cloned()).collect())
}

fn instrumented(variant: Variant, tau: usize, rounds: u64, gamma: f64, eta: f64, beta: f64, seed: u64) -> HyperConfig {
    let mut cfg = HyperConfig::new(variant, 1, tau, rounds);
    cfg.local_lr = Schedule::constant(gamma);
    cfg.global_lr = eta;
    cfg.beta1 = beta;
    cfg.beta2 = beta;
    cfg.weight_decay = 0.0;
    cfg.seed = seed;
    cfg.instrument.record_steps = true;
    cfg
}

/// Engine reductions against the independent reference loops, compared on the
/// whole parameter trajectory bit for bit, over 5 seeds and 3 settings each.
pub fn check_reductions() -> Result<CheckReport, HarnessError> {
    let engine = |cfg: &HyperConfig, p: &QuadraticProblem| {
        run(cfg, p).map_err(|e| HarnessError::in_cell(cfg.variant.name(), e))
    };
    let mut lines = Vec::new();
    let mut passed = true;
    let mut tally = |name: &str, ok: usize, total: usize, lines: &mut Vec<String>| {
        passed &= ok == total;
        lines.push(format!(
            "{name}: {ok}/{total} trajectories bitwise equal: {}",
            if ok == total { "ok" } else { "violated" }
        ));
    };

    let (mut ok, mut total) = (0, 0);
    let (mut ok_c, mut total_c) = (0, 0);
    for seed in 0..5u64 {
        for (beta, eta, gamma) in [(0.0, 1.0, 0.05), (0.9, 0.5, 0.02), (0.99, 2.0, 0.01)] {
            let p = reduction_problem(seed);
            let cfg = instrumented(Variant::Dsm, 1, 60, gamma, eta, beta, seed);
            let t = engine(&cfg, &p)?;
            let reference = ReferenceLoop {
                kind: ReferenceKind::SignSgdMomentum { beta, lr: eta * gamma },
                x0: p.initial_point(),
            };
            let out = replay(&reference, &mut recorded_grads(&t), 60)
                .map_err(|e| HarnessError::CheckFailed(e.to_string()))?;
            ok += usize::from(out.trajectory == t.snapshots);
            total += 1;
            let mut central = cfg.clone();
            central.variant = Variant::CentralizedSignSgdMomentum;
            ok_c += usize::from(engine(&central, &p)?.snapshots == t.snapshots);
            total_c += 1;
        }
    }
    tally("dsm (n=1, tau=1) vs signSGD-momentum reference", ok, total, &mut lines);
    tally("centralized variant vs dsm (n=1, tau=1)", ok_c, total_c, &mut lines);

    let (mut ok, mut total) = (0, 0);
    for seed in 0..5u64 {
        for (beta, eta, gamma, tau) in [(0.0, 1.0, 0.05, 4), (0.9, 0.5, 0.02, 8), (0.95, 1.5, 0.01, 3)] {
            let p = reduction_problem(seed);
            let cfg = instrumented(Variant::Dsm, tau, 40, gamma, eta, beta, seed);
            let t = engine(&cfg, &p)?;
            let reference = ReferenceLoop {
                kind: ReferenceKind::SignedLookahead {
                    inner: tau,
                    inner_lr: gamma,
                    outer_lr: eta,
                    beta,
                },
                x0: p.initial_point(),
            };
            let out = replay(&reference, &mut recorded_grads(&t), 40)
                .map_err(|e| HarnessError::CheckFailed(e.to_string()))?;
            ok += usize::from(out.trajectory == t.snapshots);
            total += 1;
        }
    }
    tally("dsm (n=1, tau>1) vs signed-Lookahead reference", ok, total, &mut lines);

    let (mut ok, mut total) = (0, 0);
    for seed in 0..5u64 {
        for (b1, b2, wd, lr) in [(0.9, 0.99, 0.1, 0.01), (0.95, 0.98, 0.0, 0.005), (0.0, 0.5, 0.3, 0.02)] {
            let p = reduction_problem(seed);
            let mut cfg = instrumented(Variant::LocalAvg, 1, 50, lr, 1.0, 0.0, seed);
            cfg.base = BaseOptParams::lion(b1, b2, wd);
            let t = engine(&cfg, &p)?;
            let reference = ReferenceLoop {
                kind: ReferenceKind::Lion {
                    beta1: b1,
                    beta2: b2,
                    weight_decay: wd,
                    lr,
                },
                x0: p.initial_point(),
            };
            let out = replay(&reference, &mut recorded_grads(&t), 50)
                .map_err(|e| HarnessError::CheckFailed(e.to_string()))?;
            ok += usize::from(out.trajectory == t.snapshots);
            total += 1;
        }
    }
    tally("local averaging with a Lion base (n=1, tau=1) vs Lion reference", ok, total, &mut lines);

    Ok(CheckReport {
        name: "reductions".into(),
        passed,
        json: json!({ "check": "reductions", "passed": passed, "lines": lines }),
        lines,
    })
}

/// Central finite differences against the analytic full gradient at `points`
/// random points per problem family.
pub fn check_oracles(seed: u64, points: usize) -> CheckReport {
    let problems: Vec<(Problem, f64, f64)> = vec![
        (
            Problem::Quadratic(
                QuadraticProblem::generate(&QuadraticSpec {
                    dim: 16,
                    rotate: true,
                    seed,
                    ..Default::default()
                })
                .expect("valid spec"),
            ),
            1.0,
            1e-8,
        ),
        (
            Problem::Logistic(
                LogisticProblem::generate(&LogisticSpec {
                    seed,
                    ..Default::default()
                })
                .expect("valid spec"),
            ),
            1.0,
            1e-5,
        ),
        (
            Problem::Mlp(
                MlpProblem::generate(&MlpSpec {
                    seed,
                    ..Default::default()
                })
                .expect("valid spec"),
            ),
            0.5,
            1e-5,
        ),
    ];
    let mut passed = true;
    let mut lines = Vec::new();
    let mut doc = Vec::new();
    for (i, (p, scale, tol)) in problems.iter().enumerate() {
        let mut rng = derive_stream(seed, i as u16, 0, Phase::Check);
        let mut worst: f64 = 0.0;
        for _ in 0..points {
            let x = ParamVector::from((0..p.dim()).map(|_| scale * rng.standard_normal()).collect::<Vec<_>>());
            worst = worst.max(finite_difference_check(p, &x, 1e-5));
        }
        let ok = worst < *tol;
        passed &= ok;
        lines.push(format!(
            "{}: worst relative error {worst:.2e} over {points} points (limit {tol:e}): {}",
            p.kind_name(),
            if ok { "ok" } else { "violated" }
        ));
        doc.push(json!({ "problem": p.kind_name(), "worst": worst, "limit": tol, "passed": ok }));
    }
    CheckReport {
        name: "oracles".into(),
        passed,
        lines,
        json: json!({ "check": "oracles", "passed": passed, "problems": doc }),
    }
}

/// Runs the experiment twice with sequential workers and once with `threads`
/// worker threads, into `a/`, `b/` and `parallel/` under the output
/// directory, and compares every trace file and the summary byte for byte.
pub fn check_determinism(spec: &ExperimentSpec, jobs: usize, threads: usize) -> Result<CheckReport, HarnessError> {
    let base = PathBuf::from(&spec.output.dir);
    let mut runs = Vec::new();
    for (name, worker_threads) in [("a", 1), ("b", 1), ("parallel", threads.max(2))] {
        let mut sub = spec.clone();
        sub.output.dir = base.join(name).display().to_string();
        let opts = RunOptions {
            jobs,
            worker_threads,
            write_traces: true,
        };
        runs.push(run_experiment(&sub, &opts)?);
    }
    let read = |p: &PathBuf| fs::read(p).map_err(|e| HarnessError::io(p, e));
    let mut files = 0usize;
    let mut mismatches = Vec::new();
    for (i, cell) in runs[0].cells.iter().enumerate() {
        for (k, path) in cell.files.iter().enumerate() {
            let reference = read(path)?;
            for other in &runs[1..] {
                let q = &other.cells[i].files[k];
                if read(q)? != reference {
                    mismatches.push(q.display().to_string());
                }
            }
            files += 1;
        }
    }
    let summary = |r: &crate::experiment::ExperimentReport| read(&r.out_dir.join("summary.csv"));
    let s0 = summary(&runs[0])?;
    for other in &runs[1..] {
        if summary(other)? != s0 {
            mismatches.push(other.out_dir.join("summary.csv").display().to_string());
        }
    }
    let passed = mismatches.is_empty() && files > 0;
    let lines = vec![format!(
        "{files} trace files and the summary compared across two sequential runs and one run with {} worker threads: {}",
        threads.max(2),
        if passed { "byte-identical".to_string() } else { format!("{} mismatches", mismatches.len()) }
    )];
    Ok(CheckReport {
        name: "determinism".into(),
        passed,
        lines,
        json: json!({ "check": "determinism", "passed": passed, "files": files, "mismatches": mismatches }),
    })
}

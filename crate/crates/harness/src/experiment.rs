//! Experiment orchestration: cells, trace files, the summary table and the
//! checks declared in a spec's `[check]` block.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dsm_core::engine::{run_with, HyperConfig, LocalExecutor, RunTrace, Sequential};
use dsm_core::problems::{heterogeneity_delta_sq, reference_minimum, Objective, Problem, QuadraticProblem};
use dsm_core::theory::{
    fit_rate, theorem2_terms, theorem3_terms, time_average_of_running_min, virtual_iterate_residual,
    TheoremConstants,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{BoundKind, CheckBlock, ExperimentSpec, Metric, ProblemBlock, Setting};
use crate::error::HarnessError;
use crate::exec::RayonExecutor;
use crate::trace_io::emit_trace;

/// Iterations of the accelerated reference solver behind `f*` for problems
/// without a closed-form minimum.
pub const REFERENCE_ITERS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Cells executed concurrently.
    pub jobs: usize,
    /// Threads for the workers inside one cell; 1 runs them in order.
    pub worker_threads: usize,
    /// Write one trace file per cell and format.
    pub write_traces: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            worker_threads: 1,
            write_traces: true,
        }
    }
}

/// What is kept of a cell once its trace has been written.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellOutcome {
    pub label: String,
    pub rounds: u64,
    pub seed: u64,
    pub workers: usize,
    pub local_steps: usize,
    pub metric: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_grad_l1: f64,
    pub max_dir_norm: f64,
    pub max_momentum_norm: f64,
    /// Round-0 local learning rate.
    pub gamma: f64,
    pub global_lr: f64,
    pub beta1: f64,
    pub virtual_residual: Option<f64>,
    pub trace_hash: u64,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub variant: String,
    pub rounds: u64,
    pub seeds: usize,
    pub final_loss: f64,
    pub final_grad_l1: f64,
    pub metric: f64,
    /// Log-log slope of `metric` against the round grid, with three or more round counts.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub cells: Vec<CellOutcome>,
    pub summary: Vec<SummaryRow>,
    pub f_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub lines: Vec<String>,
    pub json: serde_json::Value,
}

struct CellPlan {
    label: String,
    rounds: u64,
    cfg: HyperConfig,
}

impl CellPlan {
    fn id(&self) -> String {
        format!("{}/T{}/seed{}", self.label, self.rounds, self.cfg.seed)
    }

    fn file_stem(&self) -> String {
        format!("T{}_seed{}", self.rounds, self.cfg.seed)
    }
}

pub fn metric_value(trace: &RunTrace, metric: Metric, f_star: Option<f64>) -> f64 {
    let last = trace.final_record();
    let body = &trace.records[..trace.records.len() - 1];
    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        s / n.max(1) as f64
    };
    match metric {
        Metric::FinalLoss => last.loss,
        Metric::FinalGap => last.loss - f_star.unwrap_or(f64::NAN),
        Metric::FinalGradL1 => last.grad_l1,
        Metric::AvgGradSq => mean(&mut body.iter().map(|r| r.grad_l2sq)),
        Metric::AvgInnerGradSq => mean(&mut trace.inner_grad_sq.iter().copied()),
        Metric::RunningMinGradL1 => {
            time_average_of_running_min(&body.iter().map(|r| r.grad_l1).collect::<Vec<_>>())
        }
    }
}

fn needs_f_star(spec: &ExperimentSpec) -> bool {
    spec.sweep().metric == Metric::FinalGap
        || matches!(spec.check, Some(CheckBlock::GapReduction { .. }))
        || matches!(spec.check, Some(CheckBlock::Rate { bound: BoundKind::Theorem2 | BoundKind::Theorem3, .. }))
}

/// `f*` in closed form when the problem has one, otherwise from the
/// reference solver, cached as `reference.json` in the output directory.
pub fn f_star(block: &ProblemBlock, problem: &Problem, out_dir: &Path) -> Result<f64, HarnessError> {
    if let Some(v) = problem.optimal_value() {
        return Ok(v);
    }
    let key = toml::to_string(block).expect("problem blocks serialize");
    let path = out_dir.join("reference.json");
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(cached) = serde_json::from_str::<serde_json::Value>(&text) {
            if cached["problem"] == json!(key) && cached["iters"] == json!(REFERENCE_ITERS) {
                if let Some(v) = cached["f_star"].as_f64() {
                    return Ok(v);
                }
            }
        }
    }
    let (v, _) = reference_minimum(problem, &problem.initial_point(), REFERENCE_ITERS);
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let doc = json!({ "problem": key, "iters": REFERENCE_ITERS, "f_star": v });
    fs::write(&path, serde_json::to_string_pretty(&doc).expect("json")).map_err(|e| HarnessError::io(&path, e))?;
    Ok(v)
}

fn plan(spec: &ExperimentSpec, problem: &Problem) -> Result<Vec<CellPlan>, HarnessError> {
    let seeds = spec.sweep().seeds;
    let mut cells = Vec::new();
    for label in spec.labels() {
        for &rounds in &spec.round_grid() {
            for s in 0..seeds {
                let cfg = spec
                    .hyper_config(&label, rounds, s, problem)
                    .map_err(|e| match e {
                        HarnessError::Config(m) => HarnessError::Config(format!("{label}/T{rounds}: {m}")),
                        other => other,
                    })?;
                cells.push(CellPlan {
                    label: label.clone(),
                    rounds,
                    cfg,
                });
            }
        }
    }
    Ok(cells)
}

fn run_cell(
    spec: &ExperimentSpec,
    problem: &Problem,
    cell: &CellPlan,
    f_star: Option<f64>,
    out_dir: &Path,
    opts: &RunOptions,
    exec: &dyn LocalExecutor,
) -> Result<CellOutcome, HarnessError> {
    let trace = run_with(&cell.cfg, problem, exec).map_err(|e| HarnessError::in_cell(&cell.id(), e))?;
    let mut files = Vec::new();
    if opts.write_traces {
        for &format in &spec.output.formats {
            let path = out_dir
                .join(&cell.label)
                .join(format!("{}.{}", cell.file_stem(), format.extension()));
            emit_trace(&trace.records, format, &path)?;
            files.push(path);
        }
    }
    let virtual_residual = match (&spec.check, spec.algorithm_for(&cell.label)?.direction_bound) {
        (Some(CheckBlock::VirtualIterate { .. }), Some(r)) => {
            Some(virtual_iterate_residual(&trace.debug, cell.cfg.global_lr, cell.cfg.beta1, r))
        }
        _ => None,
    };
    Ok(CellOutcome {
        label: cell.label.clone(),
        rounds: cell.rounds,
        seed: cell.cfg.seed,
        workers: cell.cfg.workers,
        local_steps: cell.cfg.local_steps,
        metric: metric_value(&trace, spec.sweep().metric, f_star),
        initial_loss: trace.records[0].loss,
        final_loss: trace.final_record().loss,
        final_grad_l1: trace.final_record().grad_l1,
        max_dir_norm: trace.max_dir_norm(),
        max_momentum_norm: trace.max_momentum_norm(),
        gamma: cell.cfg.gamma(0).map_err(HarnessError::from_engine_config)?,
        global_lr: cell.cfg.global_lr,
        beta1: cell.cfg.beta1,
        virtual_residual,
        trace_hash: trace.fingerprint(),
        files,
    })
}

fn execute(
    spec: &ExperimentSpec,
    problem: &Problem,
    f_star: Option<f64>,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<Vec<CellOutcome>, HarnessError> {
    let cells = plan(spec, problem)?;
    let workers: Option<RayonExecutor> = if opts.worker_threads > 1 {
        Some(RayonExecutor::new(opts.worker_threads).map_err(|e| HarnessError::Config(e.to_string()))?)
    } else {
        None
    };
    let exec: &dyn LocalExecutor = match &workers {
        Some(w) => w,
        None => &Sequential,
    };
    let one = |c: &CellPlan| run_cell(spec, problem, c, f_star, out_dir, opts, exec);
    let results: Vec<Result<CellOutcome, HarnessError>> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        pool.install(|| cells.par_iter().map(one).collect())
    } else {
        cells.iter().map(one).collect()
    };
    let out: Vec<CellOutcome> = results.into_iter().collect::<Result<_, _>>()?;
    Ok(out)
}

pub fn summarize(cells: &[CellOutcome]) -> Vec<SummaryRow> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(String, u64), Vec<&CellOutcome>> = BTreeMap::new();
    for c in cells {
        if !order.contains(&c.label) {
            order.push(c.label.clone());
        }
        groups.entry((c.label.clone(), c.rounds)).or_default().push(c);
    }
    let mut rows = Vec::new();
    for label in order {
        let mut mine: Vec<SummaryRow> = groups
            .iter()
            .filter(|((l, _), _)| *l == label)
            .map(|((_, rounds), cs)| {
                let k = cs.len() as f64;
                SummaryRow {
                    variant: label.clone(),
                    rounds: *rounds,
                    seeds: cs.len(),
                    final_loss: cs.iter().map(|c| c.final_loss).sum::<f64>() / k,
                    final_grad_l1: cs.iter().map(|c| c.final_grad_l1).sum::<f64>() / k,
                    metric: cs.iter().map(|c| c.metric).sum::<f64>() / k,
                    slope: None,
                }
            })
            .collect();
        let grid: Vec<u64> = mine.iter().map(|r| r.rounds).collect();
        let metric: Vec<f64> = mine.iter().map(|r| r.metric).collect();
        let slope = fit_rate(&grid, &metric).ok();
        for r in mine.iter_mut() {
            r.slope = slope;
        }
        rows.extend(mine);
    }
    rows
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::io(path, e))?;
    let err = |e: csv::Error| HarnessError::io(path, e);
    w.write_record(["variant", "rounds", "seeds", "final_loss", "final_grad_l1", "metric", "slope"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.variant.clone(),
            r.rounds.to_string(),
            r.seeds.to_string(),
            format!("{:.16e}", r.final_loss),
            format!("{:.16e}", r.final_grad_l1),
            format!("{:.16e}", r.metric),
            r.slope.map(|s| format!("{s:.16e}")).unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Fixed-width rendering of the summary for terminals.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:<28} {:>7} {:>5} {:>13} {:>13} {:>13} {:>8}\n",
        "variant", "rounds", "seeds", "final_loss", "final_grad_l1", "metric", "slope"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<28} {:>7} {:>5} {:>13.6e} {:>13.6e} {:>13.6e} {:>8}\n",
            r.variant,
            r.rounds,
            r.seeds,
            r.final_loss,
            r.final_grad_l1,
            r.metric,
            r.slope.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
        ));
    }
    s
}

/// Runs every (variant, round count, seed) cell of the experiment, writes one trace
/// per cell and format plus `summary.csv`.
pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<ExperimentReport, HarnessError> {
    let problem = spec.problem.build()?;
    let out_dir = PathBuf::from(&spec.output.dir);
    run_on(spec, &problem, &out_dir, opts)
}

fn run_on(
    spec: &ExperimentSpec,
    problem: &Problem,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<ExperimentReport, HarnessError> {
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let f_star = if needs_f_star(spec) {
        Some(f_star(&spec.problem, problem, out_dir)?)
    } else {
        None
    };
    let cells = execute(spec, problem, f_star, out_dir, opts)?;
    let summary = summarize(&cells);
    write_summary(&summary, &out_dir.join("summary.csv"))?;
    Ok(ExperimentReport {
        out_dir: out_dir.to_path_buf(),
        cells,
        summary,
        f_star,
    })
}

fn quadratic(problem: &Problem) -> Result<&QuadraticProblem, HarnessError> {
    problem
        .as_quadratic()
        .ok_or_else(|| HarnessError::Config("check: theorem bounds need a quadratic problem".into()))
}

/// The same objective held by a single worker: shared curvature, the mean
/// center and the same initial point.
fn collapse_to_one_worker(q: &QuadraticProblem) -> Result<Problem, HarnessError> {
    QuadraticProblem::new(
        q.curvature().clone(),
        vec![q.optimum().clone()],
        q.noise_sigma(),
        q.initial_point(),
    )
    .map(Problem::Quadratic)
    .map_err(|e| HarnessError::Config(format!("problem: {e}")))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), HarnessError> {
    fs::write(path, serde_json::to_string_pretty(value).expect("json")).map_err(|e| HarnessError::io(path, e))
}

/// Runs the experiment and evaluates its `[check]` block. The report is also
/// written to `check.json` in the output directory; rate checks with a
/// theorem bound write the per-cell bound evaluation to `theorems.json`.
pub fn check_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<CheckReport, HarnessError> {
    let check = spec
        .check
        .clone()
        .ok_or_else(|| HarnessError::Config("check: this command needs a [check] block".into()))?;
    let problem = spec.problem.build()?;
    let out_dir = PathBuf::from(&spec.output.dir);
    let report = match check {
        CheckBlock::Rate {
            slope_min,
            slope_max,
            bound,
        } => {
            let run = run_on(spec, &problem, &out_dir, opts)?;
            rate_check(spec, &problem, &run, slope_min, slope_max, bound, &out_dir)?
        }
        CheckBlock::Speedup { settings } => speedup_check(spec, &problem, &settings, &out_dir, opts)?,
        CheckBlock::GapReduction { fraction } => {
            let run = run_on(spec, &problem, &out_dir, opts)?;
            gap_check(&run, fraction)
        }
        CheckBlock::MomentumBound { local_steps, tolerance } => {
            momentum_check(spec, &problem, &local_steps, tolerance, &out_dir, opts)?
        }
        CheckBlock::VirtualIterate { max_residual } => {
            let run = run_on(spec, &problem, &out_dir, opts)?;
            virtual_check(spec, &run, max_residual)?
        }
    };
    write_json(&out_dir.join("check.json"), &report.json)?;
    Ok(report)
}

fn rate_check(
    spec: &ExperimentSpec,
    problem: &Problem,
    run: &ExperimentReport,
    slope_min: f64,
    slope_max: f64,
    bound: BoundKind,
    out_dir: &Path,
) -> Result<CheckReport, HarnessError> {
    let mut passed = true;
    let mut lines = Vec::new();
    let mut theorem_doc = serde_json::Map::new();
    let mut per_variant = serde_json::Map::new();
    for label in spec.labels() {
        let rows: Vec<&SummaryRow> = run.summary.iter().filter(|r| r.variant == label).collect();
        let slope = rows.first().and_then(|r| r.slope);
        let ok = slope.is_some_and(|s| (slope_min..=slope_max).contains(&s));
        passed &= ok;
        lines.push(format!(
            "{label}: slope {} in [{slope_min}, {slope_max}]: {}",
            slope.map(|s| format!("{s:.4}")).unwrap_or_else(|| "undefined".into()),
            if ok { "ok" } else { "violated" }
        ));
        let mut cells_doc = Vec::new();
        if bound != BoundKind::None {
            let q = quadratic(problem)?;
            let algo = spec.algorithm_for(&label)?;
            let f_star = run.f_star.expect("bounds request f*");
            let x0 = problem.initial_point();
            let base = TheoremConstants {
                l: problem.smoothness().expect("quadratics know L"),
                r: 0.0,
                sigma: q.noise_sigma(),
                zeta: q.noise_sigma(),
                delta: heterogeneity_delta_sq(problem).map_err(|e| HarnessError::Config(e.to_string()))?.sqrt(),
                n: problem.workers() as u64,
                tau: algo.local_steps as u64,
                t: 1,
                eta: 0.0,
                gamma: 0.0,
                beta: 0.0,
                d: problem.dim() as u64,
                f0_minus_fstar: (problem.loss(&x0) - f_star).max(0.0),
            };
            let mut bound_name = "";
            for row in &rows {
                let cells: Vec<&CellOutcome> =
                    run.cells.iter().filter(|c| c.label == label && c.rounds == row.rounds).collect();
                let first = cells[0];
                let r_hat = cells.iter().fold(0.0f64, |m, c| m.max(c.max_dir_norm));
                let mut c = TheoremConstants {
                    t: row.rounds,
                    eta: first.global_lr,
                    gamma: first.gamma,
                    beta: first.beta1,
                    ..base
                };
                let (name, rhs, terms, assumption_ok) = match bound {
                    BoundKind::Theorem2 => {
                        let r = algo.direction_bound.ok_or_else(|| {
                            HarnessError::Config("algorithm.direction_bound: required for the theorem2 bound".into())
                        })?;
                        c.r = r;
                        let t = theorem2_terms(&c).map_err(|e| HarnessError::Config(e.to_string()))?;
                        let terms = json!({
                            "initial_gap": t.initial_gap, "noise": t.noise, "momentum": t.momentum,
                            "sign_variance": t.sign_variance, "local_drift": t.local_drift,
                        });
                        ("theorem2", t.total(), terms, r_hat <= r)
                    }
                    BoundKind::Theorem3 => {
                        c.r = r_hat;
                        let g0 = problem.full_grad(&x0).norm_l2();
                        let t = theorem3_terms(&c, g0).map_err(|e| HarnessError::Config(e.to_string()))?;
                        let terms = json!({
                            "initial_gap": t.initial_gap, "initial_grad": t.initial_grad, "step": t.step,
                            "noise": t.noise, "drift": t.drift,
                        });
                        ("theorem3", t.total(), terms, true)
                    }
                    BoundKind::None => unreachable!(),
                };
                let holds = assumption_ok && row.metric <= rhs;
                passed &= holds;
                lines.push(format!(
                    "{label} T={}: measured {:.4e} <= {name} rhs {:.4e}{}: {}",
                    row.rounds,
                    row.metric,
                    rhs,
                    if assumption_ok { String::new() } else { format!(" (R_hat {r_hat:.4} exceeds declared R)") },
                    if holds { "ok" } else { "violated" }
                ));
                cells_doc.push(json!({
                    "rounds": row.rounds, "seeds": row.seeds, "measured": row.metric, "rhs": rhs,
                    "terms": terms, "r_hat": r_hat, "eta": c.eta, "gamma": c.gamma, "beta": c.beta,
                    "holds": holds,
                }));
                bound_name = name;
            }
            let entry = theorem_doc.entry(bound_name.to_string()).or_insert_with(|| json!({}));
            entry[label.as_str()] = json!({
                "slope": slope,
                "cells": cells_doc,
                "constants": {
                    "L": base.l, "sigma": base.sigma, "delta": base.delta, "n": base.n, "tau": base.tau,
                    "d": base.d, "f0_minus_fstar": base.f0_minus_fstar,
                },
            });
        }
        per_variant.insert(
            label.clone(),
            json!({
                "slope": slope,
                "metric": rows.iter().map(|r| json!({"rounds": r.rounds, "value": r.metric})).collect::<Vec<_>>(),
                "bound_cells": cells_doc,
            }),
        );
    }
    if !theorem_doc.is_empty() {
        write_json(&out_dir.join("theorems.json"), &serde_json::Value::Object(theorem_doc))?;
    }
    Ok(CheckReport {
        name: "rate".into(),
        passed,
        lines,
        json: json!({ "check": "rate", "passed": passed, "slope_range": [slope_min, slope_max], "variants": per_variant }),
    })
}

fn speedup_check(
    spec: &ExperimentSpec,
    problem: &Problem,
    settings: &[Setting],
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<CheckReport, HarnessError> {
    if settings.len() < 2 {
        return Err(HarnessError::Config("check.settings: need at least two settings".into()));
    }
    let rounds = *spec.round_grid().last().expect("grid is never empty");
    let mut results = Vec::new();
    for s in settings {
        let mut sub = spec.clone();
        sub.algorithm.local_steps = s.local_steps;
        sub.problem = spec.problem.with_workers(s.workers);
        let mut sweep = sub.sweep();
        sweep.rounds = vec![rounds];
        sub.sweep = Some(sweep);
        let p = if s.workers == problem.workers() {
            problem.clone()
        } else if s.workers == 1 && problem.as_quadratic().is_some() {
            collapse_to_one_worker(quadratic(problem)?)?
        } else {
            sub.problem.build()?
        };
        let dir = out_dir.join(format!("n{}_tau{}", s.workers, s.local_steps));
        let run = run_on(&sub, &p, &dir, opts)?;
        let mut means = Vec::new();
        for label in sub.labels() {
            let row = run.summary.iter().find(|r| r.variant == label).expect("one row per label");
            means.push((label, row.metric));
        }
        results.push((*s, means));
    }
    let mut passed = true;
    let mut lines = Vec::new();
    let (lead, lead_means) = &results[0];
    for (other, other_means) in &results[1..] {
        for ((label, a), (_, b)) in lead_means.iter().zip(other_means) {
            let ok = a < b;
            passed &= ok;
            lines.push(format!(
                "{label} T={rounds}: n={} tau={} gives {a:.4e} < n={} tau={} gives {b:.4e}: {}",
                lead.workers,
                lead.local_steps,
                other.workers,
                other.local_steps,
                if ok { "ok" } else { "violated" }
            ));
        }
    }
    let doc: Vec<_> = results
        .iter()
        .map(|(s, m)| json!({ "workers": s.workers, "local_steps": s.local_steps, "metric": m.iter().map(|(l, v)| json!({"variant": l, "value": v})).collect::<Vec<_>>() }))
        .collect();
    Ok(CheckReport {
        name: "speedup".into(),
        passed,
        lines,
        json: json!({ "check": "speedup", "passed": passed, "rounds": rounds, "settings": doc }),
    })
}

fn gap_check(run: &ExperimentReport, fraction: f64) -> CheckReport {
    let f_star = run.f_star.expect("gap checks request f*");
    let mut passed = true;
    let mut lines = Vec::new();
    let mut doc = Vec::new();
    for c in &run.cells {
        let gap0 = c.initial_loss - f_star;
        let reduction = 1.0 - (c.final_loss - f_star) / gap0;
        let ok = gap0 > 0.0 && reduction >= fraction;
        passed &= ok;
        lines.push(format!(
            "{} seed {}: gap reduced by {:.2}% over {} rounds (need {:.0}%): {}",
            c.label,
            c.seed,
            100.0 * reduction,
            c.rounds,
            100.0 * fraction,
            if ok { "ok" } else { "violated" }
        ));
        doc.push(json!({ "variant": c.label, "seed": c.seed, "rounds": c.rounds, "reduction": reduction, "passed": ok }));
    }
    CheckReport {
        name: "gap_reduction".into(),
        passed,
        lines,
        json: json!({ "check": "gap_reduction", "passed": passed, "f_star": f_star, "fraction": fraction, "cells": doc }),
    }
}

fn momentum_check(
    spec: &ExperimentSpec,
    problem: &Problem,
    local_steps: &[usize],
    tolerance: f64,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<CheckReport, HarnessError> {
    let mut passed = true;
    let mut worst: f64 = 0.0;
    let mut cells = 0usize;
    let mut doc = Vec::new();
    for &tau in local_steps {
        let mut sub = spec.clone();
        sub.algorithm.local_steps = tau;
        let run = run_on(&sub, problem, &out_dir.join(format!("tau{tau}")), opts)?;
        for c in &run.cells {
            let limit = tau as f64 * c.max_dir_norm;
            let ratio = c.max_momentum_norm / limit;
            worst = worst.max(ratio);
            passed &= c.max_momentum_norm <= limit * (1.0 + tolerance);
            cells += 1;
            doc.push(json!({ "variant": c.label, "tau": tau, "seed": c.seed, "max_momentum": c.max_momentum_norm, "tau_r_hat": limit }));
        }
    }
    let lines = vec![format!(
        "{cells} cells: max_t ||m_t|| / (tau R_hat) peaks at {worst:.6} (limit 1 + {tolerance:e}): {}",
        if passed { "ok" } else { "violated" }
    )];
    Ok(CheckReport {
        name: "momentum_bound".into(),
        passed,
        lines,
        json: json!({ "check": "momentum_bound", "passed": passed, "worst_ratio": worst, "cells": doc }),
    })
}

fn virtual_check(spec: &ExperimentSpec, run: &ExperimentReport, max_residual: f64) -> Result<CheckReport, HarnessError> {
    let mut passed = true;
    let mut lines = Vec::new();
    let mut doc = Vec::new();
    for c in &run.cells {
        let algo = spec.algorithm_for(&c.label)?;
        let r = algo.direction_bound.ok_or_else(|| {
            HarnessError::Config("algorithm.direction_bound: required for the virtual-iterate check".into())
        })?;
        let residual = c.virtual_residual.unwrap_or(f64::INFINITY);
        let equal_betas = algo.beta1 == algo.beta2 && algo.weight_decay == 0.0;
        let ok = residual < max_residual && c.max_dir_norm <= r && equal_betas;
        passed &= ok;
        lines.push(format!(
            "{} seed {}: residual {residual:.3e} < {max_residual:e}, R_hat {:.4} <= R {r}{}: {}",
            c.label,
            c.seed,
            c.max_dir_norm,
            if equal_betas { "" } else { " (needs beta1 = beta2 and no weight decay)" },
            if ok { "ok" } else { "violated" }
        ));
        doc.push(json!({ "variant": c.label, "seed": c.seed, "residual": residual, "r_hat": c.max_dir_norm }));
    }
    Ok(CheckReport {
        name: "virtual_iterate".into(),
        passed,
        lines,
        json: json!({ "check": "virtual_iterate", "passed": passed, "cells": doc }),
    })
}

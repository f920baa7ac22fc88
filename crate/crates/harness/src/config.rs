//! Strict TOML experiment files.
//!
//! Every block rejects unknown keys. Omitted keys take the defaults written
//! next to each field.

use std::collections::BTreeMap;
use std::path::Path;

use dsm_core::base_opt::BaseOptParams;
use dsm_core::engine::{HyperConfig, Variant};
use dsm_core::problems::{
    LogisticProblem, LogisticSpec, MlpProblem, MlpSpec, Objective, Problem, QuadraticProblem, QuadraticSpec,
};
use dsm_core::schedule::Schedule;
use dsm_core::sign_ops::{SignMode, SignVariant};
use dsm_core::theory::{theorem1_gamma, theorem3_parameters};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub problem: ProblemBlock,
    #[serde(default)]
    pub algorithm: AlgorithmBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckBlock>,
    /// Per-label patches merged over `[algorithm]`, e.g. `[overrides."dsm+adamw"]`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, toml::Table>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemBlock {
    Quadratic(QuadraticBlock),
    Logistic(LogisticBlock),
    Mlp(MlpBlock),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticBlock {
    /// 16
    pub dim: usize,
    /// 4
    pub workers: usize,
    /// 0.1; total standard deviation of the additive Gaussian gradient noise.
    pub noise_sigma: f64,
    /// 1.0
    pub delta_sq: f64,
    /// 0.1
    pub eig_min: f64,
    /// 1.0; also the smoothness constant.
    pub eig_max: f64,
    /// 1.0
    pub init_radius: f64,
    /// false
    pub rotate: bool,
    /// 0; structural seed.
    pub seed: u64,
}

impl Default for QuadraticBlock {
    fn default() -> Self {
        let s = QuadraticSpec::default();
        Self {
            dim: s.dim,
            workers: s.workers,
            noise_sigma: s.noise_sigma,
            delta_sq: s.delta_sq,
            eig_min: s.eig_min,
            eig_max: s.eig_max,
            init_radius: s.init_radius,
            rotate: s.rotate,
            seed: s.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticBlock {
    /// 16
    pub dim: usize,
    /// 4
    pub workers: usize,
    /// 128
    pub samples_per_worker: usize,
    /// 0.01; L2 regularization inside the objective.
    pub reg: f64,
    /// 1.0
    pub feature_scale: f64,
    /// 0.0
    pub signal: f64,
    /// 0.5; per-worker feature shift, the source of heterogeneity.
    pub shift: f64,
    /// 0
    pub seed: u64,
}

impl Default for LogisticBlock {
    fn default() -> Self {
        let s = LogisticSpec::default();
        Self {
            dim: s.dim,
            workers: s.workers,
            samples_per_worker: s.samples_per_worker,
            reg: s.reg,
            feature_scale: s.feature_scale,
            signal: s.signal,
            shift: s.shift,
            seed: s.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpBlock {
    /// 4
    pub input: usize,
    /// 8
    pub hidden: usize,
    /// 4
    pub workers: usize,
    /// 64
    pub samples_per_worker: usize,
    /// 0.1
    pub target_noise: f64,
    /// 0.5
    pub shift: f64,
    /// 0
    pub seed: u64,
}

impl Default for MlpBlock {
    fn default() -> Self {
        let s = MlpSpec::default();
        Self {
            input: s.input,
            hidden: s.hidden,
            workers: s.workers,
            samples_per_worker: s.samples_per_worker,
            target_noise: s.target_noise,
            shift: s.shift,
            seed: s.seed,
        }
    }
}

impl ProblemBlock {
    pub fn workers(&self) -> usize {
        match self {
            ProblemBlock::Quadratic(q) => q.workers,
            ProblemBlock::Logistic(l) => l.workers,
            ProblemBlock::Mlp(m) => m.workers,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ProblemBlock::Quadratic(_) => "quadratic",
            ProblemBlock::Logistic(_) => "logistic",
            ProblemBlock::Mlp(_) => "mlp",
        }
    }

    pub fn with_workers(&self, workers: usize) -> Self {
        let mut out = self.clone();
        match &mut out {
            ProblemBlock::Quadratic(q) => q.workers = workers,
            ProblemBlock::Logistic(l) => l.workers = workers,
            ProblemBlock::Mlp(m) => m.workers = workers,
        }
        out
    }

    pub fn build(&self) -> Result<Problem, HarnessError> {
        let bad = |e| HarnessError::Config(format!("problem: {e}"));
        Ok(match self {
            ProblemBlock::Quadratic(q) => Problem::Quadratic(
                QuadraticProblem::generate(&QuadraticSpec {
                    dim: q.dim,
                    workers: q.workers,
                    noise_sigma: q.noise_sigma,
                    delta_sq: q.delta_sq,
                    eig_min: q.eig_min,
                    eig_max: q.eig_max,
                    init_radius: q.init_radius,
                    rotate: q.rotate,
                    seed: q.seed,
                })
                .map_err(bad)?,
            ),
            ProblemBlock::Logistic(l) => Problem::Logistic(
                LogisticProblem::generate(&LogisticSpec {
                    dim: l.dim,
                    workers: l.workers,
                    samples_per_worker: l.samples_per_worker,
                    reg: l.reg,
                    feature_scale: l.feature_scale,
                    signal: l.signal,
                    shift: l.shift,
                    seed: l.seed,
                })
                .map_err(bad)?,
            ),
            ProblemBlock::Mlp(m) => Problem::Mlp(
                MlpProblem::generate(&MlpSpec {
                    input: m.input,
                    hidden: m.hidden,
                    workers: m.workers,
                    samples_per_worker: m.samples_per_worker,
                    target_noise: m.target_noise,
                    shift: m.shift,
                    seed: m.seed,
                })
                .map_err(bad)?,
            ),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignBlock {
    Hard,
    Bipolar,
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKindBlock {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleBlock {
    /// constant
    pub kind: ScheduleKindBlock,
    /// 0.01
    pub peak: f64,
    /// 0
    pub warmup_steps: u64,
    /// the cell's round count when omitted
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<u64>,
    /// 0.05
    pub floor_fraction: f64,
}

impl Default for ScheduleBlock {
    fn default() -> Self {
        Self {
            kind: ScheduleKindBlock::Constant,
            peak: 0.01,
            warmup_steps: 0,
            total_steps: None,
            floor_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKindBlock {
    Sgd,
    Polyak,
    Adamw,
    Lion,
}

impl BaseKindBlock {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "sgd" => Some(Self::Sgd),
            "polyak" => Some(Self::Polyak),
            "adamw" => Some(Self::Adamw),
            "lion" => Some(Self::Lion),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Polyak => "polyak",
            Self::Adamw => "adamw",
            Self::Lion => "lion",
        }
    }
}

/// Local optimizer. Unset coefficients default by kind: Polyak 0.9; AdamW
/// 0.9 / 0.95 with no decay; Lion 0.95 / 0.98 with decay 0.1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseBlock {
    pub kind: BaseKindBlock,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

impl Default for BaseBlock {
    fn default() -> Self {
        Self {
            kind: BaseKindBlock::Sgd,
            beta1: None,
            beta2: None,
            weight_decay: None,
            eps: None,
        }
    }
}

impl BaseBlock {
    pub fn params(&self) -> BaseOptParams {
        let mut p = match self.kind {
            BaseKindBlock::Sgd => BaseOptParams::sgd(),
            BaseKindBlock::Polyak => BaseOptParams::polyak(0.9),
            BaseKindBlock::Adamw => BaseOptParams::adamw(0.9, 0.95, 0.0),
            BaseKindBlock::Lion => BaseOptParams::lion(0.95, 0.98, 0.1),
        };
        if let Some(b) = self.beta1 {
            p.beta1 = b;
        }
        if let Some(b) = self.beta2 {
            p.beta2 = b;
        }
        if let Some(w) = self.weight_decay {
            p.weight_decay = w;
        }
        if let Some(e) = self.eps {
            p.eps = e;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmBlock {
    /// "dsm"
    pub variant: String,
    /// 4
    pub local_steps: usize,
    /// 1000; replaced by each entry of `sweep.rounds`.
    pub rounds: u64,
    pub local_lr: ScheduleBlock,
    /// 1.0
    pub global_lr: f64,
    /// 0.95
    pub beta1: f64,
    /// 0.98
    pub beta2: f64,
    /// 0.1
    pub weight_decay: f64,
    /// hard
    pub sign: SignBlock,
    /// Declared bound `R` on local direction norms; randomized signs use `B = local_steps * R`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction_bound: Option<f64>,
    pub base: BaseBlock,
    /// 0.0
    pub fedmv_alpha: f64,
    /// 1.0
    pub fedmv_bound: f64,
    /// 1e-8
    pub global_eps: f64,
    /// 0; cell `s` of a sweep runs with `seed + s`.
    pub seed: u64,
}

impl Default for AlgorithmBlock {
    fn default() -> Self {
        Self {
            variant: "dsm".into(),
            local_steps: 4,
            rounds: 1000,
            local_lr: ScheduleBlock::default(),
            global_lr: 1.0,
            beta1: 0.95,
            beta2: 0.98,
            weight_decay: 0.1,
            sign: SignBlock::Hard,
            direction_bound: None,
            base: BaseBlock::default(),
            fedmv_alpha: 0.0,
            fedmv_bound: 1.0,
            global_eps: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Prescription {
    /// Use `[algorithm]` as written.
    #[default]
    None,
    /// Constant `gamma = (R / eta) sqrt(n tau / T)`.
    Theorem1,
    /// `eta = 1 / (L T^(3/4))` and `beta1 = beta2 = 1 - 1 / sqrt(T)`.
    Theorem3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    FinalLoss,
    FinalGap,
    FinalGradL1,
    /// `(1/T) sum_t grad_l2sq` over rounds `0..T`.
    AvgGradSq,
    /// `(1/(T tau)) sum_{t,k} ||grad f(mean_i x_{t,k})||^2`.
    AvgInnerGradSq,
    /// Time average of the running minimum of `grad_l1` over rounds `0..T`.
    RunningMinGradL1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepBlock {
    /// `[algorithm.rounds]` when empty
    pub rounds: Vec<u64>,
    /// 1
    pub seeds: u64,
    /// `[algorithm.variant]` when empty; `name` or `name+base`
    pub variants: Vec<String>,
    /// none
    pub prescription: Prescription,
    /// final_loss
    pub metric: Metric,
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self {
            rounds: Vec::new(),
            seeds: 1,
            variants: Vec::new(),
            prescription: Prescription::None,
            metric: Metric::FinalLoss,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    Csv,
    Jsonl,
}

impl TraceFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TraceFormat::Csv => "csv",
            TraceFormat::Jsonl => "jsonl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    /// "out"
    pub dir: String,
    /// ["csv"]
    pub formats: Vec<TraceFormat>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            formats: vec![TraceFormat::Csv],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    #[default]
    None,
    Theorem2,
    Theorem3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setting {
    pub workers: usize,
    pub local_steps: usize,
}

/// What `check-theorems` (or `sweep`) asserts after running the cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckBlock {
    /// Fitted log-log slope of the sweep metric within `[slope_min, slope_max]`,
    /// and optionally every cell below a theorem's right-hand side.
    Rate {
        slope_min: f64,
        slope_max: f64,
        #[serde(default)]
        bound: BoundKind,
    },
    /// The first setting's seed-mean metric is strictly below every other's
    /// at the sweep's last round count.
    Speedup { settings: Vec<Setting> },
    /// Every variant closes at least `fraction` of `f(x0) - f*` by its final round.
    GapReduction { fraction: f64 },
    /// `max_t ||m_t|| <= tau R_hat (1 + tolerance)` for every cell and every `local_steps` value.
    MomentumBound { local_steps: Vec<usize>, tolerance: f64 },
    /// Largest relative residual of the virtual-iterate recursion below `max_residual`.
    VirtualIterate { max_residual: f64 },
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let spec: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("specs always serialize")
    }

    /// Semantic checks that do not need to run anything.
    pub fn validate(&self) -> Result<(), HarnessError> {
        for label in self.labels() {
            self.algorithm_for(&label)?;
        }
        for label in self.overrides.keys() {
            if !self.labels().contains(label) {
                return Err(HarnessError::Config(format!(
                    "overrides.\"{label}\": no such variant label in the sweep"
                )));
            }
        }
        if let Some(s) = &self.sweep {
            if s.seeds == 0 {
                return Err(HarnessError::Config("sweep.seeds: must be at least 1".into()));
            }
            if s.rounds.contains(&0) {
                return Err(HarnessError::Config("sweep.rounds: entries must be positive".into()));
            }
        }
        if self.output.formats.is_empty() {
            return Err(HarnessError::Config("output.formats: need at least one format".into()));
        }
        Ok(())
    }

    pub fn sweep(&self) -> SweepBlock {
        self.sweep.clone().unwrap_or_default()
    }

    /// Variant labels in sweep order.
    pub fn labels(&self) -> Vec<String> {
        let s = self.sweep();
        if s.variants.is_empty() {
            vec![self.algorithm.variant.clone()]
        } else {
            s.variants
        }
    }

    pub fn round_grid(&self) -> Vec<u64> {
        let s = self.sweep();
        if s.rounds.is_empty() {
            vec![self.algorithm.rounds]
        } else {
            s.rounds
        }
    }

    /// `[algorithm]` with the label's `+base` suffix and overrides applied.
    pub fn algorithm_for(&self, label: &str) -> Result<AlgorithmBlock, HarnessError> {
        let (name, base) = match label.split_once('+') {
            Some((n, b)) => (n, Some(b)),
            None => (label, None),
        };
        Variant::from_name(name).map_err(|_| HarnessError::Config(format!("unknown variant `{name}` in `{label}`")))?;
        let mut algo = self.algorithm.clone();
        algo.variant = name.to_string();
        if let Some(b) = base {
            let kind = BaseKindBlock::from_name(b)
                .ok_or_else(|| HarnessError::Config(format!("unknown base optimizer `{b}` in `{label}`")))?;
            if kind != algo.base.kind {
                algo.base = BaseBlock { kind, ..BaseBlock::default() };
            }
        }
        if let Some(patch) = self.overrides.get(label) {
            let mut table = toml::Table::try_from(&algo).expect("algorithm block serializes");
            merge(&mut table, patch);
            algo = table
                .try_into()
                .map_err(|e: toml::de::Error| HarnessError::Config(format!("overrides.\"{label}\": {}", e.message())))?;
        }
        Ok(algo)
    }

    /// Engine configuration for one cell.
    pub fn hyper_config(
        &self,
        label: &str,
        rounds: u64,
        seed_offset: u64,
        problem: &Problem,
    ) -> Result<HyperConfig, HarnessError> {
        let algo = self.algorithm_for(label)?;
        let variant = Variant::from_name(&algo.variant).map_err(HarnessError::from_engine_config)?;
        let n = self.problem.workers();
        let tau = algo.local_steps;
        let mut cfg = HyperConfig::new(variant, n, tau, rounds);
        let sched = &algo.local_lr;
        cfg.local_lr = match sched.kind {
            ScheduleKindBlock::Constant => Schedule::constant(sched.peak),
            ScheduleKindBlock::Cosine => Schedule::cosine(
                sched.peak,
                sched.warmup_steps,
                sched.total_steps.unwrap_or(rounds),
                sched.floor_fraction,
            ),
        };
        cfg.global_lr = algo.global_lr;
        cfg.beta1 = algo.beta1;
        cfg.beta2 = algo.beta2;
        cfg.weight_decay = algo.weight_decay;
        cfg.base = algo.base.params();
        cfg.fedmv_alpha = algo.fedmv_alpha;
        cfg.fedmv_bound = algo.fedmv_bound;
        cfg.global_eps = algo.global_eps;
        cfg.seed = algo.seed.wrapping_add(seed_offset);
        let need_r = || {
            algo.direction_bound
                .ok_or_else(|| HarnessError::Config("algorithm.direction_bound: required here".into()))
        };
        cfg.sign_mode = match algo.sign {
            SignBlock::Hard => SignMode::HARD,
            SignBlock::Bipolar => SignMode::randomized(SignVariant::RandomizedBipolar, tau as f64 * need_r()?),
            SignBlock::Sparse => SignMode::randomized(SignVariant::RandomizedSparse, tau as f64 * need_r()?),
        };
        match self.sweep().prescription {
            Prescription::None => {}
            Prescription::Theorem1 => {
                let gamma = theorem1_gamma(need_r()?, cfg.global_lr, n as u64, tau as u64, rounds);
                cfg.local_lr = Schedule::constant(gamma);
            }
            Prescription::Theorem3 => {
                let l = problem.smoothness().ok_or_else(|| {
                    HarnessError::Config("sweep.prescription: theorem3 needs a problem with known smoothness".into())
                })?;
                let (eta, beta) = theorem3_parameters(l, rounds);
                cfg.global_lr = eta;
                cfg.beta1 = beta;
                cfg.beta2 = beta;
            }
        }
        if self.sweep().metric == Metric::AvgInnerGradSq {
            cfg.instrument.inner_grad_metric = true;
        }
        if matches!(self.check, Some(CheckBlock::VirtualIterate { .. })) {
            cfg.instrument.record_steps = true;
        }
        cfg.validate().map_err(HarnessError::from_engine_config)?;
        Ok(cfg)
    }
}

fn merge(into: &mut toml::Table, patch: &toml::Table) {
    for (k, v) in patch {
        match (into.get_mut(k), v) {
            (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => merge(dst, src),
            _ => {
                into.insert(k.clone(), v.clone());
            }
        }
    }
}

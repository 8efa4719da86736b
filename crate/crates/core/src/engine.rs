//! Run configuration, the round loop, metrics and stepsize sweeps.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::algorithms::{round, Algo, AlgoState, Method, RoundContext, ShiftInit};
use crate::compressors::{CompressorConfig, CompressorSpec};
use crate::dataio::PartitionConfig;
use crate::error::{Error, Result};
use crate::problems::{BatchSize, Objective, OptReference, ProblemConfig, ProblemOracle};
use crate::rng::{StreamKey, StreamRole};
use crate::theory::{
    abc_constants, beta_diana, lyapunov_diana, lyapunov_plain, stepsize_abc,
    stepsize_convex_general, stepsize_dcgd_strong, stepsize_diana_strong, AbcCase, Bound, Family,
    TheoryInputs,
};
use crate::vector::{dist_sq, norm_sq};

pub const METRICS_HEADER: &str =
    "round,f,grad_norm_sq,dist_sq,lyapunov,w_drift,uplink_cum,downlink_cum";

/// Rounds executed when only a stop rule bounds the run.
pub const DEFAULT_ROUND_CAP: usize = 10_000_000;

// --------------------------------------------------------------------- config

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoryTag {
    Theory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamSpec {
    Value(f64),
    Named(TheoryTag),
}

impl Default for ParamSpec {
    fn default() -> Self {
        ParamSpec::Named(TheoryTag::Theory)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FullTag {
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchSpec {
    Size(usize),
    Named(FullTag),
}

impl Default for BatchSpec {
    fn default() -> Self {
        BatchSpec::Named(FullTag::Full)
    }
}

impl From<BatchSpec> for BatchSize {
    fn from(b: BatchSpec) -> Self {
        match b {
            BatchSpec::Size(s) => BatchSize::Sampled(s),
            BatchSpec::Named(FullTag::Full) => BatchSize::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RoundsSpec {
    Count(usize),
    Named(TheoryTag),
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub algo: Algo,
    #[serde(default)]
    pub gamma: ParamSpec,
    #[serde(default = "one")]
    pub gamma_multiplier: f64,
    #[serde(default)]
    pub beta: ParamSpec,
    #[serde(default)]
    pub batch_size: BatchSpec,
    /// Per-sample gradient variance bound used by theory stepsizes for
    /// stochastic nonconvex runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_sq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressorsConfig {
    #[serde(default = "CompressorConfig::identity")]
    pub dual: CompressorConfig,
    #[serde(default = "CompressorConfig::identity")]
    pub primal: CompressorConfig,
}

impl Default for CompressorsConfig {
    fn default() -> Self {
        Self {
            dual: CompressorConfig::identity(),
            primal: CompressorConfig::identity(),
        }
    }
}

/// Stop once any listed threshold is met.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_norm_sq: Option<f64>,
    /// `f(x) - f*`; needs a reference solution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum X0Config {
    #[default]
    Zero,
    Values(Vec<f64>),
    Gaussian {
        scale: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl X0Config {
    pub fn build(&self, dim: usize) -> Result<Vec<f64>> {
        match self {
            X0Config::Zero => Ok(vec![0.0; dim]),
            X0Config::Values(v) if v.len() == dim => Ok(v.clone()),
            X0Config::Values(v) => Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            }),
            X0Config::Gaussian { scale, seed } => {
                use rand_distr::{Distribution, StandardNormal};
                let mut rng = StreamKey::new(*seed, StreamRole::Setup, 3, 0).rng();
                Ok((0..dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        scale * z
                    })
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    #[serde(default = "default_ref_tol")]
    pub tolerance: f64,
    #[serde(default = "default_ref_iter")]
    pub max_iter: usize,
}

fn default_ref_tol() -> f64 {
    1e-8
}

fn default_ref_iter() -> usize {
    1_000_000
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            tolerance: default_ref_tol(),
            max_iter: default_ref_iter(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub compressors: CompressorsConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<RoundsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds_for_averaging: Option<Vec<u64>>,
    #[serde(default)]
    pub x0: X0Config,
    #[serde(default)]
    pub shift_init: ShiftInit,
    #[serde(default)]
    pub downlink_times_n: bool,
    /// Reference minimiser for distance/Lyapunov metrics. Quadratics always
    /// get one (a linear solve); dataset problems only when this is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceConfig>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

// -------------------------------------------------------------------- metrics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub f: f64,
    pub grad_norm_sq: f64,
    pub dist_sq: Option<f64>,
    pub lyapunov: Option<f64>,
    pub w_drift: f64,
    pub uplink_cum: u64,
    pub downlink_cum: u64,
}

/// Shortest representation that parses back to the same bits.
fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn write_metrics_csv(rows: &[RoundMetrics]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.round,
            fmt_f64(r.f),
            fmt_f64(r.grad_norm_sq),
            opt(r.dist_sq),
            opt(r.lyapunov),
            fmt_f64(r.w_drift),
            r.uplink_cum,
            r.downlink_cum
        );
    }
    out
}

pub fn read_metrics_csv(text: &str) -> Result<Vec<RoundMetrics>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end_matches('\r') == METRICS_HEADER => {}
        other => {
            return Err(Error::config(
                "metrics",
                format!("unexpected header {:?}", other.unwrap_or("")),
            ))
        }
    }
    let bad =
        |line: usize, what: &str| Error::config("metrics", format!("line {line}: bad {what}"));
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line = i + 2;
            let cells: Vec<&str> = l.trim_end_matches('\r').split(',').collect();
            if cells.len() != 8 {
                return Err(bad(line, "column count"));
            }
            let num = |c: &str, what: &str| c.parse::<f64>().map_err(|_| bad(line, what));
            let opt = |c: &str, what: &str| {
                if c.is_empty() {
                    Ok(None)
                } else {
                    num(c, what).map(Some)
                }
            };
            Ok(RoundMetrics {
                round: cells[0].parse().map_err(|_| bad(line, "round"))?,
                f: num(cells[1], "f")?,
                grad_norm_sq: num(cells[2], "grad_norm_sq")?,
                dist_sq: opt(cells[3], "dist_sq")?,
                lyapunov: opt(cells[4], "lyapunov")?,
                w_drift: num(cells[5], "w_drift")?,
                uplink_cum: cells[6].parse().map_err(|_| bad(line, "uplink_cum"))?,
                downlink_cum: cells[7].parse().map_err(|_| bad(line, "downlink_cum"))?,
            })
        })
        .collect()
}

pub fn default_stride(rounds: usize) -> usize {
    if rounds <= 10_000 {
        1
    } else {
        rounds.div_ceil(10_000)
    }
}

// ----------------------------------------------------------------- experiment

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Stopped { rule: String },
    Diverged { round: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algo: Algo,
    pub seed: u64,
    pub final_f: f64,
    pub final_grad_norm_sq: f64,
    pub rounds: usize,
    pub uplink_cum: u64,
    pub downlink_cum: u64,
    pub gamma_used: f64,
    pub beta_used: f64,
    pub theory_caps: Option<Bound>,
    pub status: RunStatus,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<RoundMetrics>,
    pub state: AlgoState,
    pub summary: RunSummary,
}

impl RunOutput {
    pub fn csv(&self) -> String {
        write_metrics_csv(&self.metrics)
    }

    pub fn diverged(&self) -> bool {
        matches!(self.summary.status, RunStatus::Diverged { .. })
    }

    /// `min_t |grad f(x^t)|^2` over emitted rows.
    pub fn min_grad_norm_sq(&self) -> f64 {
        self.metrics
            .iter()
            .map(|m| m.grad_norm_sq)
            .fold(f64::INFINITY, f64::min)
    }
}

/// A validated configuration with its problem, method and theory quantities
/// resolved; reusable across seeds.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub oracle: ProblemOracle,
    pub method: Method,
    pub x0: Vec<f64>,
    pub shift_init: ShiftInit,
    pub rounds: usize,
    pub stop: Option<StopRule>,
    pub stride: usize,
    pub theory_caps: Option<Bound>,
    pub theory_inputs: Option<TheoryInputs>,
    /// Divergence threshold on `f`.
    pub f_limit: f64,
}

fn compressor_omega(spec: &CompressorSpec) -> f64 {
    spec.omega().unwrap_or(0.0)
}

fn compressor_alpha(spec: &CompressorSpec) -> f64 {
    spec.alpha().unwrap_or(1.0)
}

impl Experiment {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let mut oracle = cfg.problem.build(&cfg.partition)?;
        let dim = oracle.dim();
        let algo = cfg.algorithm.algo;
        let dual = cfg.compressors.dual.build(dim)?;
        let primal = cfg.compressors.primal.build(dim)?;
        let x0 = cfg.x0.build(dim)?;

        let convex = match oracle.objective() {
            Objective::Quadratic(_) => true,
            Objective::LogReg(l) => l.lambda == 0.0,
        };
        let want_reference =
            matches!(oracle.objective(), Objective::Quadratic(_)) || cfg.reference.is_some();
        if want_reference {
            if !convex {
                return Err(Error::config(
                    "reference",
                    "a minimiser reference needs a convex problem",
                ));
            }
            let rc = cfg.reference.clone().unwrap_or_default();
            let r = oracle.compute_opt_reference(rc.tolerance, rc.max_iter)?;
            oracle.set_reference(r);
        }

        let constants = oracle.constants().clone();
        let omega = if algo.compresses_uplink() {
            compressor_omega(&dual)
        } else {
            0.0
        };
        let alpha = if algo.compresses_downlink() {
            compressor_alpha(&primal)
        } else {
            1.0
        };
        let mut inputs = TheoryInputs::from_constants(&constants, omega, alpha);
        let f0 = oracle.value(&x0);
        if let Some((f_low, per)) = oracle.lower_bounds() {
            inputs.delta0 = Some(f0 - f_low);
            inputs.delta_star = Some(f_low - per.iter().sum::<f64>() / per.len() as f64);
        }
        inputs.eps = cfg.stop.and_then(|s| s.grad_norm_sq);
        let batch: BatchSize = cfg.algorithm.batch_size.into();
        if let (Some(s), BatchSize::Sampled(b)) = (cfg.algorithm.sigma_sq, batch) {
            inputs.sigma_sq = Some(s / b as f64);
        }

        let beta = match cfg.algorithm.beta {
            ParamSpec::Value(b) => b,
            ParamSpec::Named(TheoryTag::Theory) => beta_diana(omega),
        };

        let mut theory_rounds = None;
        let (gamma, caps) = match cfg.algorithm.gamma {
            ParamSpec::Value(g) => (g * cfg.algorithm.gamma_multiplier, None),
            ParamSpec::Named(TheoryTag::Theory) => {
                let (bound, t) = theory_stepsize(algo, convex, &inputs, &oracle, batch)?;
                theory_rounds = t;
                (bound.value * cfg.algorithm.gamma_multiplier, Some(bound))
            }
        };

        let rounds = match cfg.rounds {
            Some(RoundsSpec::Count(t)) => t,
            Some(RoundsSpec::Named(TheoryTag::Theory)) => {
                let t = theory_rounds.ok_or_else(|| {
                    Error::config(
                        "rounds",
                        "\"theory\" horizon needs a nonconvex problem with gamma \"theory\"",
                    )
                })?;
                usize::try_from(t)
                    .unwrap_or(usize::MAX)
                    .clamp(1, DEFAULT_ROUND_CAP)
            }
            None if cfg.stop.is_some() => DEFAULT_ROUND_CAP,
            None => return Err(Error::config("rounds", "give a round count or a stop rule")),
        };
        if rounds == 0 && cfg.stop.is_none() {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        if let Some(stop) = cfg.stop {
            if stop.grad_norm_sq.is_none() && stop.f_gap.is_none() {
                return Err(Error::config("stop", "name at least one threshold"));
            }
            if stop.f_gap.is_some() && oracle.reference().is_none() {
                return Err(Error::MissingReference(
                    "stop.f_gap needs a reference solution".into(),
                ));
            }
        }
        let stride = match cfg.metric_stride {
            Some(0) => return Err(Error::config("metric_stride", "must be at least 1")),
            Some(s) => s,
            None => default_stride(rounds),
        };

        let method = Method {
            algo,
            dual,
            primal,
            gamma,
            beta,
            batch,
            seed: cfg.seed,
            downlink_times_n: cfg.downlink_times_n,
        };
        method.validate(dim)?;

        Ok(Self {
            oracle,
            method,
            x0,
            shift_init: cfg.shift_init,
            rounds,
            stop: cfg.stop,
            stride,
            theory_caps: caps,
            theory_inputs: Some(inputs),
            f_limit: 1e3 * f0.abs() + 1e3,
        })
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut e = self.clone();
        e.method.seed = seed;
        e
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        let mut e = self.clone();
        e.method.gamma = gamma;
        e.theory_caps = None;
        e
    }

    fn metrics_at(&self, state: &AlgoState, up: u64, down: u64, f: f64) -> RoundMetrics {
        let reference: Option<&OptReference> = self.oracle.reference();
        let grad = self.oracle.grad(&state.x);
        let lyapunov = reference.map(|r| {
            if self.method.algo.uses_shifts() {
                let omega = compressor_omega(&self.method.dual);
                lyapunov_diana(
                    &state.x,
                    &state.h_workers,
                    state.gamma,
                    omega,
                    &self.oracle,
                    Some(r),
                )
                .unwrap_or(f64::NAN)
            } else {
                lyapunov_plain(&state.x, state.gamma, &self.oracle, r)
            }
        });
        RoundMetrics {
            round: state.t,
            f,
            grad_norm_sq: norm_sq(&grad),
            dist_sq: reference.map(|r| dist_sq(&state.x, &r.x_star)),
            lyapunov,
            w_drift: state.w_drift(),
            uplink_cum: up,
            downlink_cum: down,
        }
    }

    fn stop_hit(&self, m: &RoundMetrics) -> Option<String> {
        let stop = self.stop?;
        if let Some(eps) = stop.grad_norm_sq {
            if m.grad_norm_sq <= eps {
                return Some(format!("grad_norm_sq <= {eps}"));
            }
        }
        if let (Some(eps), Some(r)) = (stop.f_gap, self.oracle.reference()) {
            if m.f - r.f_star <= eps {
                return Some(format!("f - f* <= {eps}"));
            }
        }
        None
    }

    /// Execute the configured rounds. Divergence ends the run early with a
    /// `Diverged` status; invariant violations are errors.
    pub fn run(&self, pool: Option<&ThreadPool>) -> Result<RunOutput> {
        let mut state =
            AlgoState::init(&self.method, &self.oracle, self.x0.clone(), self.shift_init)?;
        let mut ctx = RoundContext::new(&self.oracle, &self.method);
        if let Some(p) = pool {
            ctx = ctx.with_pool(p);
        }
        let (mut up, mut down) = (0u64, 0u64);
        let f0 = self.oracle.value(&state.x);
        let first = self.metrics_at(&state, 0, 0, f0);
        let mut status = self
            .stop_hit(&first)
            .map(|rule| RunStatus::Stopped { rule });
        let mut metrics = vec![first];
        while status.is_none() && state.t < self.rounds {
            let msgs = match round(&mut state, &ctx) {
                Ok(m) => m,
                Err(Error::Diverged { round, reason }) => {
                    status = Some(RunStatus::Diverged { round, reason });
                    break;
                }
                Err(e) => return Err(e),
            };
            up += msgs.uplink_coords;
            down += msgs.downlink_coords;
            let f = self.oracle.value(&state.x);
            if !f.is_finite() || f > self.f_limit {
                status = Some(RunStatus::Diverged {
                    round: state.t,
                    reason: format!("f = {f} exceeds the divergence limit {}", self.f_limit),
                });
                if f.is_finite() {
                    metrics.push(self.metrics_at(&state, up, down, f));
                }
                break;
            }
            let last = state.t == self.rounds;
            if self.stop.is_some() {
                let m = self.metrics_at(&state, up, down, f);
                if let Some(rule) = self.stop_hit(&m) {
                    status = Some(RunStatus::Stopped { rule });
                    metrics.push(m);
                    break;
                }
                if last || state.t % self.stride == 0 {
                    metrics.push(m);
                }
            } else if last || state.t % self.stride == 0 {
                metrics.push(self.metrics_at(&state, up, down, f));
            }
        }
        let end = metrics.last().cloned().expect("round 0 is always emitted");
        let summary = RunSummary {
            algo: self.method.algo,
            seed: self.method.seed,
            final_f: end.f,
            final_grad_norm_sq: end.grad_norm_sq,
            rounds: state.t,
            uplink_cum: up,
            downlink_cum: down,
            gamma_used: self.method.gamma,
            beta_used: self.method.beta,
            theory_caps: self.theory_caps.clone(),
            status: status.unwrap_or(RunStatus::Completed),
        };
        Ok(RunOutput {
            metrics,
            state,
            summary,
        })
    }
}

fn theory_stepsize(
    algo: Algo,
    convex: bool,
    inputs: &TheoryInputs,
    oracle: &ProblemOracle,
    batch: BatchSize,
) -> Result<(Bound, Option<u64>)> {
    if algo == Algo::Gd {
        return Ok((
            Bound {
                value: 1.0 / inputs.l,
                terms: vec![("1/L".into(), 1.0 / inputs.l)],
            },
            None,
        ));
    }
    if convex {
        let strong = inputs.mu > 0.0;
        let bound = match algo {
            Algo::Ef21p if strong => {
                let g = inputs.alpha / (16.0 * inputs.l);
                Bound {
                    value: g,
                    terms: vec![("alpha/(16L)".into(), g)],
                }
            }
            Algo::Ef21p => {
                let g = inputs.alpha / (8.0 * inputs.l);
                Bound {
                    value: g,
                    terms: vec![("alpha/(8L)".into(), g)],
                }
            }
            Algo::Diana | Algo::Ef21pDiana if strong => stepsize_diana_strong(inputs)?,
            Algo::Diana | Algo::Ef21pDiana => stepsize_convex_general(inputs, Family::Diana)?,
            _ if strong => stepsize_dcgd_strong(inputs)?,
            _ => stepsize_convex_general(inputs, Family::Dcgd)?,
        };
        return Ok((bound, None));
    }
    // nonconvex: the ABC route (compressed-uplink DCGD family and EF21-P)
    if algo.uses_shifts() {
        return Err(Error::Theory(format!(
            "no nonconvex stepsize is available for {}",
            algo.name()
        )));
    }
    if inputs.eps.is_none() {
        return Err(Error::config(
            "stop.grad_norm_sq",
            "nonconvex theory stepsizes need the target eps from stop.grad_norm_sq",
        ));
    }
    let case = match batch {
        BatchSize::Full => AbcCase::FullGrad,
        BatchSize::Sampled(_) if oracle.is_homogeneous() => AbcCase::Homogeneous,
        BatchSize::Sampled(_) => AbcCase::BoundedVar,
    };
    let abc = abc_constants(case, inputs)?;
    let s = stepsize_abc(inputs, &abc)?;
    Ok((s.gamma, Some(s.rounds)))
}

/// Parse and prepare a run; returns the experiment.
pub fn prepare(cfg: &RunConfig) -> Result<Experiment> {
    Experiment::from_config(cfg)
}

/// Prepare and execute with an optional worker pool.
pub fn run(cfg: &RunConfig, pool: Option<&ThreadPool>) -> Result<RunOutput> {
    Experiment::from_config(cfg)?.run(pool)
}

/// Worker pool sized by `BICOMP_THREADS` (default: available parallelism).
pub fn pool_from_env() -> Result<ThreadPool> {
    let threads = match std::env::var("BICOMP_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| {
                Error::config(
                    "BICOMP_THREADS",
                    format!("expected a positive integer, got {v:?}"),
                )
            })?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    build_pool(threads)
}

pub fn build_pool(threads: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))
}

// ---------------------------------------------------------------------- sweep

/// `{2^i : i in [lo, hi]}`
pub fn power_of_two_grid(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|i| 2f64.powi(i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub gamma: f64,
    pub summary: RunSummary,
    /// Total coordinates (up + down) when the stop rule first held.
    pub coords_to_target: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    /// Index of the lowest final `f` among non-diverged cells.
    pub best_final_f: Option<usize>,
    /// Index of the fewest coordinates to reach the stop rule.
    pub best_coords_to_target: Option<usize>,
}

/// Run every stepsize (cells in parallel, each single-threaded).
pub fn sweep(base: &Experiment, gammas: &[f64]) -> Result<SweepReport> {
    if gammas.is_empty() {
        return Err(Error::config("grid", "stepsize grid is empty"));
    }
    let cells: Vec<SweepCell> = gammas
        .par_iter()
        .map(|&g| {
            let out = base.with_gamma(g).run(None)?;
            let coords_to_target = match out.summary.status {
                RunStatus::Stopped { .. } => {
                    Some(out.summary.uplink_cum + out.summary.downlink_cum)
                }
                _ => None,
            };
            Ok(SweepCell {
                gamma: g,
                summary: out.summary,
                coords_to_target,
            })
        })
        .collect::<Result<_>>()?;
    let ok = |c: &&(usize, &SweepCell)| !matches!(c.1.summary.status, RunStatus::Diverged { .. });
    let best_final_f = cells
        .iter()
        .enumerate()
        .filter(|c| ok(&c))
        .min_by(|a, b| a.1.summary.final_f.total_cmp(&b.1.summary.final_f))
        .map(|c| c.0);
    let best_coords_to_target = cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.coords_to_target.map(|v| (i, v)))
        .min_by_key(|&(_, v)| v)
        .map(|c| c.0);
    Ok(SweepReport {
        cells,
        best_final_f,
        best_coords_to_target,
    })
}

// ----------------------------------------------------------------- multi-seed

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub round: usize,
    pub mean: [f64; 5],
    pub stderr: [f64; 5],
}

/// Per-row mean and standard error of `f, grad_norm_sq, dist_sq, lyapunov,
/// w_drift` (missing columns become NaN).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<SeedAggregate>,
    /// Rows were dropped to align runs of unequal length.
    pub truncated: bool,
}

pub fn multi_seed(
    exp: &Experiment,
    seeds: &[u64],
    pool: Option<&ThreadPool>,
) -> Result<MultiSeedReport> {
    if seeds.is_empty() {
        return Err(Error::config(
            "seeds_for_averaging",
            "need at least one seed",
        ));
    }
    let runs: Vec<Vec<RoundMetrics>> = seeds
        .iter()
        .map(|&s| exp.with_seed(s).run(pool).map(|o| o.metrics))
        .collect::<Result<_>>()?;
    Ok(aggregate(seeds, &runs))
}

pub fn aggregate(seeds: &[u64], runs: &[Vec<RoundMetrics>]) -> MultiSeedReport {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    let truncated = runs.iter().any(|r| r.len() != len);
    if truncated {
        log::warn!("multi-seed streams differ in length; aligning on the first {len} rows");
    }
    let k = runs.len() as f64;
    let rows = (0..len)
        .map(|row| {
            let cols = |m: &RoundMetrics| {
                [
                    m.f,
                    m.grad_norm_sq,
                    m.dist_sq.unwrap_or(f64::NAN),
                    m.lyapunov.unwrap_or(f64::NAN),
                    m.w_drift,
                ]
            };
            let mut mean = [0.0; 5];
            for r in runs {
                for (a, v) in mean.iter_mut().zip(cols(&r[row])) {
                    *a += v;
                }
            }
            mean.iter_mut().for_each(|v| *v /= k);
            let mut stderr = [0.0; 5];
            if runs.len() >= 2 {
                for r in runs {
                    for ((s, v), m) in stderr.iter_mut().zip(cols(&r[row])).zip(mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                stderr
                    .iter_mut()
                    .for_each(|s| *s = (*s / (k - 1.0)).sqrt() / k.sqrt());
            }
            SeedAggregate {
                round: runs[0][row].round,
                mean,
                stderr,
            }
        })
        .collect();
    MultiSeedReport {
        seeds: seeds.to_vec(),
        rows,
        truncated,
    }
}

//! Round-exact GD, EF21-P, DCGD, DIANA, EF21-P + DCGD and EF21-P + DIANA.
//!
//! All six methods share one round routine so that a method with some
//! components switched off performs literally the same floating-point
//! operations as the simpler method it collapses to.
//!
//! Random draws are keyed by `(seed, Dual, worker, round)`,
//! `(seed, Primal, 0, round)` and `(seed, Sample, worker, round)`.

use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::compressors::{CompressorSpec, DeclaredClass, ShiftEncoding};
use crate::error::{Error, Result};
use crate::problems::{BatchSize, ProblemOracle};
use crate::rng::{StreamKey, StreamRole};
use crate::vector::{all_finite, average_dense, average_sparse, dist_sq, SparseVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Gd,
    Ef21p,
    Dcgd,
    Diana,
    Ef21pDcgd,
    Ef21pDiana,
}

impl Algo {
    pub const ALL: [Algo; 6] = [
        Algo::Gd,
        Algo::Ef21p,
        Algo::Dcgd,
        Algo::Diana,
        Algo::Ef21pDcgd,
        Algo::Ef21pDiana,
    ];

    /// Workers compress their uplink messages.
    pub fn compresses_uplink(self) -> bool {
        matches!(
            self,
            Algo::Dcgd | Algo::Diana | Algo::Ef21pDcgd | Algo::Ef21pDiana
        )
    }

    /// Server compresses the model shift (EF21-P family).
    pub fn compresses_downlink(self) -> bool {
        matches!(self, Algo::Ef21p | Algo::Ef21pDcgd | Algo::Ef21pDiana)
    }

    /// Maintains gradient shifts `h_i`.
    pub fn uses_shifts(self) -> bool {
        matches!(self, Algo::Diana | Algo::Ef21pDiana)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algo::Gd => "gd",
            Algo::Ef21p => "ef21p",
            Algo::Dcgd => "dcgd",
            Algo::Diana => "diana",
            Algo::Ef21pDcgd => "ef21p_dcgd",
            Algo::Ef21pDiana => "ef21p_diana",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftInit {
    #[default]
    Zero,
    /// `h_i^0 = grad f_i(x^0)`
    Grad,
}

/// Everything that fixes the algorithm apart from the problem and the state.
#[derive(Debug, Clone)]
pub struct Method {
    pub algo: Algo,
    pub dual: CompressorSpec,
    pub primal: CompressorSpec,
    pub gamma: f64,
    pub beta: f64,
    pub batch: BatchSize,
    pub seed: u64,
    /// Count the broadcast once per worker instead of once per round.
    pub downlink_times_n: bool,
}

impl Method {
    /// Plain method with identity compressors in both slots.
    pub fn new(algo: Algo, dim: usize, gamma: f64) -> Self {
        Self {
            algo,
            dual: CompressorSpec::identity(dim),
            primal: CompressorSpec::identity(dim),
            gamma,
            beta: if algo.uses_shifts() { 1.0 } else { 0.0 },
            batch: BatchSize::Full,
            seed: 0,
            downlink_times_n: false,
        }
    }

    pub fn with_dual(mut self, dual: CompressorSpec) -> Self {
        self.dual = dual;
        self
    }

    pub fn with_primal(mut self, primal: CompressorSpec) -> Self {
        self.primal = primal;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_batch(mut self, batch: BatchSize) -> Self {
        self.batch = batch;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::config(
                "algorithm.gamma",
                format!("must be positive and finite, got {}", self.gamma),
            ));
        }
        if self.algo.compresses_uplink() {
            if self.dual.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: self.dual.dim(),
                });
            }
            let omega = match self.dual.declared_class() {
                DeclaredClass::Unbiased { omega } | DeclaredClass::Both { omega, .. } => omega,
                DeclaredClass::Contractive { .. } => {
                    return Err(Error::ClassMisuse(format!(
                        "{} needs an unbiased uplink compressor, but {} is only contractive",
                        self.algo.name(),
                        self.dual.name()
                    )))
                }
            };
            if self.algo.uses_shifts() {
                let cap = 1.0 / (omega + 1.0);
                if !(self.beta >= 0.0 && self.beta <= cap * (1.0 + 1e-12)) {
                    return Err(Error::config(
                        "algorithm.beta",
                        format!(
                            "must lie in [0, 1/(omega+1)] = [0, {cap}], got {}",
                            self.beta
                        ),
                    ));
                }
            }
        }
        if self.algo.compresses_downlink() {
            if self.primal.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: self.primal.dim(),
                });
            }
            if let DeclaredClass::Unbiased { .. } = self.primal.declared_class() {
                return Err(Error::ClassMisuse(format!(
                    "{} needs a contractive downlink compressor, but {} is only unbiased (wrap it as scaled_unbiased)",
                    self.algo.name(),
                    self.primal.name()
                )));
            }
        }
        if let BatchSize::Sampled(0) = self.batch {
            return Err(Error::config("algorithm.batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// Replicated state of one algorithm instance.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgoState {
    pub x: Vec<f64>,
    pub w_server: Vec<f64>,
    /// Worker copies of `w` (EF21-P family only; empty otherwise).
    pub w_workers: Vec<Vec<f64>>,
    /// Worker shifts `h_i` (DIANA family only; empty otherwise).
    pub h_workers: Vec<Vec<f64>>,
    pub h_server: Vec<f64>,
    pub t: usize,
    pub gamma: f64,
    pub beta: f64,
}

impl AlgoState {
    /// `w^0 = x^0`; shifts zero or `grad f_i(x^0)`.
    pub fn init(
        method: &Method,
        oracle: &ProblemOracle,
        x0: Vec<f64>,
        shift: ShiftInit,
    ) -> Result<Self> {
        let n = oracle.n_workers();
        let dim = oracle.dim();
        if x0.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x0.len(),
            });
        }
        method.validate(dim)?;
        let w_workers = if method.algo.compresses_downlink() {
            vec![x0.clone(); n]
        } else {
            Vec::new()
        };
        let (h_workers, h_server) = if method.algo.uses_shifts() {
            let hs: Vec<Vec<f64>> = match shift {
                ShiftInit::Zero => vec![vec![0.0; dim]; n],
                ShiftInit::Grad => (0..n).map(|i| oracle.worker_grad(i, &x0)).collect(),
            };
            let h = average_dense(&hs, dim);
            (hs, h)
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Self {
            w_server: x0.clone(),
            x: x0,
            w_workers,
            h_workers,
            h_server,
            t: 0,
            gamma: method.gamma,
            beta: method.beta,
        })
    }

    /// `|w - x|^2`
    pub fn w_drift(&self) -> f64 {
        dist_sq(&self.w_server, &self.x)
    }

    /// `max_j |h - (1/n) sum_i h_i|_j`
    pub fn shift_drift(&self) -> f64 {
        if self.h_workers.is_empty() {
            return 0.0;
        }
        let mean = average_dense(&self.h_workers, self.h_server.len());
        self.h_server
            .iter()
            .zip(&mean)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest coordinate gap between any worker copy of `w` and the server's.
    pub fn replica_drift(&self) -> f64 {
        self.w_workers
            .iter()
            .flat_map(|w| w.iter().zip(&self.w_server).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMessages {
    pub uplink: Vec<SparseVector>,
    /// The broadcast `p^{t+1}` (or the full model when the downlink is not
    /// compressed).
    pub downlink: SparseVector,
    pub uplink_coords: u64,
    pub downlink_coords: u64,
    /// `|x^{t+1} - w^t|^2`, the input to the primal compressor.
    pub primal_residual_sq: Option<f64>,
}

/// What a round needs besides the state.
pub struct RoundContext<'a> {
    pub oracle: &'a ProblemOracle,
    pub method: &'a Method,
    pub pool: Option<&'a ThreadPool>,
}

impl<'a> RoundContext<'a> {
    pub fn new(oracle: &'a ProblemOracle, method: &'a Method) -> Self {
        Self {
            oracle,
            method,
            pool: None,
        }
    }

    pub fn with_pool(mut self, pool: &'a ThreadPool) -> Self {
        self.pool = Some(pool);
        self
    }

    fn gradient(&self, worker: usize, point: &[f64], round: usize) -> Result<Vec<f64>> {
        match self.method.batch {
            BatchSize::Full => Ok(self.oracle.worker_grad(worker, point)),
            batch => {
                let mut rng =
                    StreamKey::new(self.method.seed, StreamRole::Sample, worker, round).rng();
                self.oracle.stochastic_grad(worker, point, batch, &mut rng)
            }
        }
    }

    fn worker_message(&self, state: &AlgoState, worker: usize) -> Result<SparseVector> {
        let algo = self.method.algo;
        let point = if algo.compresses_downlink() {
            &state.w_workers[worker]
        } else {
            &state.x
        };
        let grad = self.gradient(worker, point, state.t)?;
        if !all_finite(&grad) {
            return Err(Error::Diverged {
                round: state.t,
                reason: format!("non-finite gradient at worker {worker}"),
            });
        }
        if !algo.compresses_uplink() {
            return Ok(SparseVector::dense(grad));
        }
        let key = StreamKey::new(self.method.seed, StreamRole::Dual, worker, state.t);
        let mut stream = self.method.dual.stream(key);
        if algo.uses_shifts() {
            let diff: Vec<f64> = grad
                .iter()
                .zip(&state.h_workers[worker])
                .map(|(g, h)| g - h)
                .collect();
            stream.compress(&diff)
        } else {
            stream.compress(&grad)
        }
    }

    fn uplink(&self, state: &AlgoState) -> Result<Vec<SparseVector>> {
        let n = self.oracle.n_workers();
        match self.pool {
            Some(pool) if pool.current_num_threads() > 1 => pool.install(|| {
                (0..n)
                    .into_par_iter()
                    .map(|i| self.worker_message(state, i))
                    .collect()
            }),
            _ => (0..n).map(|i| self.worker_message(state, i)).collect(),
        }
    }
}

/// One synchronous round of whichever method `ctx.method` names.
pub fn round(state: &mut AlgoState, ctx: &RoundContext) -> Result<RoundMessages> {
    let algo = ctx.method.algo;
    let dim = state.x.len();
    let n = ctx.oracle.n_workers();

    let uplink = ctx.uplink(state)?;
    let m = average_sparse(&uplink, dim);

    let g = if algo.uses_shifts() {
        let beta = state.beta;
        for (msg, h) in uplink.iter().zip(state.h_workers.iter_mut()) {
            msg.scaled_add_into(beta, h);
        }
        // g uses the shift from before this round's update
        let g: Vec<f64> = state
            .h_server
            .iter()
            .zip(&m)
            .map(|(h, mi)| h + mi)
            .collect();
        for (h, mi) in state.h_server.iter_mut().zip(&m) {
            *h += beta * mi;
        }
        g
    } else {
        m
    };

    let gamma = state.gamma;
    for (xi, gi) in state.x.iter_mut().zip(&g) {
        *xi -= gamma * gi;
    }
    if !all_finite(&state.x) {
        return Err(Error::Diverged {
            round: state.t,
            reason: "non-finite model".into(),
        });
    }

    let (downlink, primal_residual_sq) = if algo.compresses_downlink() {
        let residual: Vec<f64> = state
            .x
            .iter()
            .zip(&state.w_server)
            .map(|(x, w)| x - w)
            .collect();
        let key = StreamKey::new(ctx.method.seed, StreamRole::Primal, 0, state.t);
        let p = ctx.method.primal.stream(key).compress(&residual)?;
        let residual_sq = residual.iter().map(|r| r * r).sum();
        let message = match ctx.method.primal.shift_encoding() {
            ShiftEncoding::Overwrite => {
                let values = p.indices().iter().map(|&j| state.x[j]).collect();
                SparseVector::new(dim, p.indices().to_vec(), values)?
            }
            ShiftEncoding::Delta => p,
        };
        apply_shift(
            &message,
            ctx.method.primal.shift_encoding(),
            &mut state.w_server,
        );
        for w in state.w_workers.iter_mut() {
            apply_shift(&message, ctx.method.primal.shift_encoding(), w);
        }
        (message, Some(residual_sq))
    } else {
        state.w_server.clone_from(&state.x);
        (SparseVector::dense(state.x.clone()), None)
    };

    state.t += 1;
    check_invariants(state)?;

    let uplink_coords = uplink.iter().map(|m| m.stored() as u64).sum();
    let per_link = downlink.stored() as u64;
    let downlink_coords = if ctx.method.downlink_times_n {
        per_link * n as u64
    } else {
        per_link
    };
    Ok(RoundMessages {
        uplink,
        downlink,
        uplink_coords,
        downlink_coords,
        primal_residual_sq,
    })
}

/// Receiver side of the model-shift broadcast. Selection compressors keep
/// coordinates of `x^{t+1} - w^t` unchanged, so `w^t + C(x^{t+1} - w^t)`
/// equals `x^{t+1}` on the support; that message carries those entries.
fn apply_shift(message: &SparseVector, encoding: ShiftEncoding, w: &mut [f64]) {
    match encoding {
        ShiftEncoding::Overwrite => {
            for (j, v) in message.iter() {
                w[j] = v;
            }
        }
        ShiftEncoding::Delta => message.add_into(w),
    }
}

/// Shift drift above this (relative to the shift scale) aborts the run.
const SHIFT_DRIFT_ABORT: f64 = 1e-9;

fn check_invariants(state: &AlgoState) -> Result<()> {
    if state.w_workers.iter().any(|w| w != &state.w_server) {
        return Err(Error::InvariantViolation {
            round: state.t,
            invariant: "worker copies of w differ from the server's".into(),
        });
    }
    if !state.h_workers.is_empty() {
        let scale = state.h_server.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let drift = state.shift_drift();
        if drift > SHIFT_DRIFT_ABORT * scale {
            return Err(Error::InvariantViolation {
                round: state.t,
                invariant: format!("h differs from the mean of h_i by {drift:e}"),
            });
        }
    }
    Ok(())
}

fn expect(ctx: &RoundContext, algo: Algo) -> Result<()> {
    if ctx.method.algo != algo {
        return Err(Error::config(
            "algorithm.algo",
            format!(
                "round for {} called with method {}",
                algo.name(),
                ctx.method.algo.name()
            ),
        ));
    }
    Ok(())
}

pub fn gd_round(state: &mut AlgoState, ctx: &RoundContext) -> Result<RoundMessages> {
    expect(ctx, Algo::Gd)?;
    round(state, ctx)
}

pub fn ef21p_round(state: &mut AlgoState, ctx: &RoundContext) -> Result<RoundMessages> {
    expect(ctx, Algo::Ef21p)?;
    round(state, ctx)
}

pub fn dcgd_round(state: &mut AlgoState, ctx: &RoundContext) -> Result<RoundMessages> {
    expect(ctx, Algo::Dcgd)?;
    round(state, ctx)
}

pub fn diana_round(state: &mut AlgoState, ctx: &RoundContext) -> Result<RoundMessages> {
    expect(ctx, Algo::Diana)?;
    round(state, ctx)
}

pub fn ef21p_dcgd_round(state: &mut AlgoState, ctx: &RoundContext) -> Result<RoundMessages> {
    expect(ctx, Algo::Ef21pDcgd)?;
    round(state, ctx)
}

pub fn ef21p_diana_round(state: &mut AlgoState, ctx: &RoundContext) -> Result<RoundMessages> {
    expect(ctx, Algo::Ef21pDiana)?;
    round(state, ctx)
}

/// Run `rounds` rounds and return the model trajectory `x^0..x^T`.
pub fn trajectory(
    method: &Method,
    oracle: &ProblemOracle,
    x0: Vec<f64>,
    shift: ShiftInit,
    rounds: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut state = AlgoState::init(method, oracle, x0, shift)?;
    let ctx = RoundContext::new(oracle, method);
    let mut out = Vec::with_capacity(rounds + 1);
    out.push(state.x.clone());
    for _ in 0..rounds {
        round(&mut state, &ctx)?;
        out.push(state.x.clone());
    }
    Ok(out)
}

//! Per-worker objectives with certified smoothness constants.
//!
//! Two families are provided: quadratics `f_i(x) = 1/2 x'A_i x - b_i'x`
//! (exact constants by eigendecomposition) and multiclass softmax logistic
//! regression with an optional nonconvex regularizer (upper-bound constants
//! by power iteration). The global objective is always the plain average
//! `f = (1/n) sum_i f_i`.

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{partition, Dataset, PartitionConfig, PartitionStrategy, SparseRow};
use crate::error::{Error, Result};
use crate::rng::{StreamKey, StreamRole};
use crate::vector::{average_dense, dist_sq, norm_sq};

const SYMMETRY_TOL: f64 = 1e-12;

// ---------------------------------------------------------------- quadratics

/// One worker's quadratic. `b_samples`, when present, are the per-sample
/// linear terms whose mean is `b`; they make stochastic gradients
/// `A x - b_j` available with an `x`-independent variance.
#[derive(Debug, Clone)]
pub struct QuadraticWorker {
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
    pub b_samples: Vec<Vec<f64>>,
}

impl QuadraticWorker {
    pub fn new(a: DMatrix<f64>, b: Vec<f64>) -> Self {
        Self {
            a,
            b,
            b_samples: Vec::new(),
        }
    }

    /// Worker built from samples sharing `a`; `b` is their mean.
    pub fn with_samples(a: DMatrix<f64>, b_samples: Vec<Vec<f64>>) -> Self {
        let dim = a.nrows();
        let b = average_dense(&b_samples, dim);
        Self { a, b, b_samples }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let ax = self.apply(x);
        0.5 * x.iter().zip(&ax).map(|(u, v)| u * v).sum::<f64>()
            - x.iter().zip(&self.b).map(|(u, v)| u * v).sum::<f64>()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.a.nrows();
        (0..n)
            .map(|r| (0..n).map(|c| self.a[(r, c)] * x[c]).sum())
            .collect()
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.apply(x);
        for (gi, bi) in g.iter_mut().zip(&self.b) {
            *gi -= bi;
        }
        g
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    pub workers: Vec<QuadraticWorker>,
    dim: usize,
}

impl QuadraticProblem {
    pub fn new(workers: Vec<QuadraticWorker>) -> Result<Self> {
        let first = workers
            .first()
            .ok_or_else(|| Error::InvalidProblem("quadratic needs at least one worker".into()))?;
        let dim = first.a.nrows();
        for (i, w) in workers.iter().enumerate() {
            if w.a.nrows() != dim || w.a.ncols() != dim || w.b.len() != dim {
                return Err(Error::InvalidProblem(format!(
                    "worker {i}: matrix/vector shapes differ from dimension {dim}"
                )));
            }
            if w.b_samples.iter().any(|s| s.len() != dim) {
                return Err(Error::InvalidProblem(format!(
                    "worker {i}: sample vector of wrong length"
                )));
            }
            let scale = w.a.abs().max().max(1.0);
            if (&w.a - w.a.transpose()).abs().max() > SYMMETRY_TOL * scale {
                return Err(Error::InvalidProblem(format!(
                    "worker {i}: matrix is not symmetric"
                )));
            }
            let min_eig = SymmetricEigen::new(w.a.clone()).eigenvalues.min();
            if min_eig < -SYMMETRY_TOL * scale {
                return Err(Error::InvalidProblem(format!(
                    "worker {i}: matrix is not positive semidefinite (eigenvalue {min_eig})"
                )));
            }
        }
        Ok(Self { workers, dim })
    }

    pub fn from_dense(mats: Vec<Vec<Vec<f64>>>, vecs: Vec<Vec<f64>>) -> Result<Self> {
        if mats.len() != vecs.len() {
            return Err(Error::InvalidProblem(
                "matrix and vector counts differ".into(),
            ));
        }
        let workers = mats
            .into_iter()
            .zip(vecs)
            .map(|(m, b)| {
                let d = m.len();
                if m.iter().any(|row| row.len() != d) {
                    return Err(Error::InvalidProblem("matrix is not square".into()));
                }
                Ok(QuadraticWorker::new(
                    DMatrix::from_fn(d, d, |r, c| m[r][c]),
                    b,
                ))
            })
            .collect::<Result<_>>()?;
        Self::new(workers)
    }

    pub fn mean_matrix(&self) -> DMatrix<f64> {
        let n = self.workers.len() as f64;
        let mut acc = DMatrix::zeros(self.dim, self.dim);
        for w in &self.workers {
            acc += &w.a;
        }
        acc / n
    }

    pub fn mean_vector(&self) -> Vec<f64> {
        let bs: Vec<Vec<f64>> = self.workers.iter().map(|w| w.b.clone()).collect();
        average_dense(&bs, self.dim)
    }

    pub fn exact_constants(&self) -> SmoothnessConstants {
        let n = self.workers.len() as f64;
        let spectral = |m: &DMatrix<f64>| {
            let e = SymmetricEigen::new(m.clone()).eigenvalues;
            e.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
        };
        let l_i: Vec<f64> = self.workers.iter().map(|w| spectral(&w.a)).collect();
        let mean = self.mean_matrix();
        let eig = SymmetricEigen::new(mean.clone()).eigenvalues;
        let l = eig.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let mu = eig.min().max(0.0);
        let mut sq = DMatrix::zeros(self.dim, self.dim);
        for w in &self.workers {
            sq += &w.a * &w.a;
        }
        sq /= n;
        let l_hat = SymmetricEigen::new(sq).eigenvalues.max().max(0.0).sqrt();
        SmoothnessConstants::new(l, l_i, l_hat, mu, ConstantsKind::Exact)
    }

    /// Solve `A_bar x = b_bar`.
    pub fn minimizer(&self) -> Result<Vec<f64>> {
        let chol = self.mean_matrix().cholesky().ok_or_else(|| {
            Error::InvalidProblem("averaged matrix is singular; no unique minimizer".into())
        })?;
        let x = chol.solve(&DVector::from_vec(self.mean_vector()));
        Ok(x.iter().copied().collect())
    }
}

/// Recipe for a random quadratic testbed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticQuadratic {
    pub n_workers: usize,
    pub dim: usize,
    /// Ridge added to every `A_i`; lower-bounds `mu`.
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    /// `b_i = A_i x_hat` for one shared `x_hat`, so every worker is minimised
    /// at the same point.
    #[serde(default)]
    pub interpolation: bool,
    /// Per-worker sample count for stochastic gradients (0: deterministic).
    #[serde(default)]
    pub samples_per_worker: usize,
    /// Standard deviation of the per-sample linear-term noise.
    #[serde(default)]
    pub sample_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_ridge() -> f64 {
    0.5
}

impl SyntheticQuadratic {
    pub fn build(&self) -> Result<QuadraticProblem> {
        if self.n_workers == 0 || self.dim == 0 {
            return Err(Error::InvalidProblem(
                "synthetic quadratic needs n_workers, dim >= 1".into(),
            ));
        }
        let d = self.dim;
        let mut rng = StreamKey::new(self.seed, StreamRole::Setup, 1, 0).rng();
        let x_hat: Vec<f64> = gaussian_vec(&mut rng, d);
        let workers = (0..self.n_workers)
            .map(|_| {
                let m: DMatrix<f64> =
                    DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
                let a = (&m * m.transpose()) / d as f64 + DMatrix::identity(d, d) * self.ridge;
                let a = (&a + a.transpose()) * 0.5;
                let b: Vec<f64> = if self.interpolation {
                    (0..d)
                        .map(|r| (0..d).map(|c| a[(r, c)] * x_hat[c]).sum())
                        .collect()
                } else {
                    gaussian_vec(&mut rng, d)
                };
                if self.samples_per_worker == 0 {
                    return QuadraticWorker::new(a, b);
                }
                // centred noise keeps the mean exactly at b up to rounding
                let m = self.samples_per_worker;
                let mut noise: Vec<Vec<f64>> = (0..m)
                    .map(|_| {
                        gaussian_vec(&mut rng, d)
                            .into_iter()
                            .map(|v| v * self.sample_noise)
                            .collect()
                    })
                    .collect();
                let mean = average_dense(&noise, d);
                for s in &mut noise {
                    for (v, mv) in s.iter_mut().zip(&mean) {
                        *v -= mv;
                    }
                }
                let samples = noise
                    .into_iter()
                    .map(|s| s.iter().zip(&b).map(|(u, v)| u + v).collect())
                    .collect();
                QuadraticWorker::with_samples(a, samples)
            })
            .collect();
        QuadraticProblem::new(workers)
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

// ------------------------------------------------------- logistic regression

/// `lambda * sum_k t_k^2 / (1 + t_k^2)` over all coordinates and its gradient.
pub fn nonconvex_reg_value_grad(x: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let grad = x
        .iter()
        .map(|&t| {
            let s = 1.0 + t * t;
            value += t * t / s;
            lambda * 2.0 * t / (s * s)
        })
        .collect();
    (lambda * value, grad)
}

/// Multiclass softmax regression; the model is `classes` stacked weight
/// vectors of length `d_features` (class-major).
#[derive(Debug, Clone)]
pub struct LogRegProblem {
    rows: Arc<[SparseRow]>,
    labels: Arc<[usize]>,
    workers: Vec<Vec<usize>>,
    pub classes: usize,
    pub d_features: usize,
    /// Weight of the nonconvex regularizer (0 disables it).
    pub lambda: f64,
}

impl LogRegProblem {
    pub fn new(
        dataset: &Dataset,
        classes: Option<usize>,
        workers: Vec<Vec<usize>>,
        lambda: f64,
    ) -> Result<Self> {
        let (labels, found) = dataset.class_ids();
        let classes = classes.unwrap_or(found).max(found);
        if classes < 2 {
            return Err(Error::InvalidProblem(
                "logistic regression needs at least two classes".into(),
            ));
        }
        Self::from_parts(
            dataset.rows.clone(),
            labels,
            classes,
            dataset.d_features,
            workers,
            lambda,
        )
    }

    pub fn from_parts(
        rows: Vec<SparseRow>,
        labels: Vec<usize>,
        classes: usize,
        d_features: usize,
        workers: Vec<Vec<usize>>,
        lambda: f64,
    ) -> Result<Self> {
        if lambda < 0.0 {
            return Err(Error::InvalidProblem(
                "regularizer weight must be nonnegative".into(),
            ));
        }
        if rows.len() != labels.len() {
            return Err(Error::InvalidProblem(
                "rows and labels differ in length".into(),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::InvalidProblem(format!(
                "label {bad} outside [0, {classes})"
            )));
        }
        if rows
            .iter()
            .any(|r| r.indices.iter().any(|&i| i >= d_features))
        {
            return Err(Error::InvalidProblem(
                "feature index beyond d_features".into(),
            ));
        }
        if workers.is_empty() {
            return Err(Error::InvalidProblem("need at least one worker".into()));
        }
        if let Some(i) = workers.iter().position(Vec::is_empty) {
            return Err(Error::InvalidProblem(format!(
                "worker {i} holds no samples"
            )));
        }
        Ok(Self {
            rows: rows.into(),
            labels: labels.into(),
            workers,
            classes,
            d_features,
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.classes * self.d_features
    }

    pub fn worker_samples(&self, worker: usize) -> &[usize] {
        &self.workers[worker]
    }

    /// Log-loss of one sample and (optionally) its gradient accumulated into
    /// `grad` with weight `scale`.
    fn sample_loss(&self, sample: usize, x: &[f64], grad: Option<(&mut [f64], f64)>) -> f64 {
        let row = &self.rows[sample];
        let y = self.labels[sample];
        let d = self.d_features;
        let logits: Vec<f64> = (0..self.classes)
            .map(|c| row.dot(&x[c * d..(c + 1) * d]))
            .collect();
        let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let loss = max + sum.ln() - logits[y];
        if let Some((g, scale)) = grad {
            for c in 0..self.classes {
                let coeff = scale * (exps[c] / sum - if c == y { 1.0 } else { 0.0 });
                let block = &mut g[c * d..(c + 1) * d];
                for (&i, &v) in row.indices.iter().zip(&row.values) {
                    block[i] += coeff * v;
                }
            }
        }
        loss
    }

    pub fn worker_value(&self, worker: usize, x: &[f64]) -> f64 {
        let samples = &self.workers[worker];
        let m = samples.len() as f64;
        let data: f64 = samples
            .iter()
            .map(|&s| self.sample_loss(s, x, None))
            .sum::<f64>()
            / m;
        data + self.reg_value(x)
    }

    pub fn worker_value_grad(&self, worker: usize, x: &[f64]) -> (f64, Vec<f64>) {
        let samples = &self.workers[worker];
        let m = samples.len() as f64;
        let mut g = vec![0.0; self.dim()];
        let mut value = 0.0;
        for &s in samples {
            value += self.sample_loss(s, x, Some((&mut g, 1.0 / m)));
        }
        value /= m;
        if self.lambda > 0.0 {
            let (rv, rg) = nonconvex_reg_value_grad(x, self.lambda);
            value += rv;
            for (a, b) in g.iter_mut().zip(rg) {
                *a += b;
            }
        }
        (value, g)
    }

    fn reg_value(&self, x: &[f64]) -> f64 {
        if self.lambda > 0.0 {
            nonconvex_reg_value_grad(x, self.lambda).0
        } else {
            0.0
        }
    }

    /// Minibatch gradient: data term averaged over `batch` (sample positions
    /// within the worker), regularizer added exactly.
    fn batch_grad(&self, worker: usize, batch: &[usize], x: &[f64]) -> Vec<f64> {
        let samples = &self.workers[worker];
        let scale = 1.0 / batch.len() as f64;
        let mut g = vec![0.0; self.dim()];
        for &pos in batch {
            self.sample_loss(samples[pos], x, Some((&mut g, scale)));
        }
        if self.lambda > 0.0 {
            let (_, rg) = nonconvex_reg_value_grad(x, self.lambda);
            for (a, b) in g.iter_mut().zip(rg) {
                *a += b;
            }
        }
        g
    }

    /// `lambda_max(A_i' A_i)` of the worker's design matrix by power iteration.
    pub fn design_spectral_norm_sq(&self, worker: usize) -> PowerIteration {
        let samples = &self.workers[worker];
        let d = self.d_features;
        let op = |v: &[f64]| {
            let mut out = vec![0.0; d];
            for &s in samples {
                let row = &self.rows[s];
                let av = row.dot(v);
                for (&i, &val) in row.indices.iter().zip(&row.values) {
                    out[i] += val * av;
                }
            }
            out
        };
        power_iteration(op, d, 100, 1e-8)
    }

    pub fn upper_bound_constants(&self) -> SmoothnessConstants {
        let mut converged = true;
        let l_i: Vec<f64> = (0..self.workers.len())
            .map(|w| {
                let pi = self.design_spectral_norm_sq(w);
                converged &= pi.converged;
                pi.value / (2.0 * self.workers[w].len() as f64) + 2.0 * self.lambda
            })
            .collect();
        let n = l_i.len() as f64;
        let l = l_i.iter().sum::<f64>() / n;
        let l_hat = (l_i.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let mut c = SmoothnessConstants::new(l, l_i, l_hat, 0.0, ConstantsKind::UpperBound);
        c.power_iteration_converged = converged;
        c
    }
}

// -------------------------------------------------------------- power method

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerIteration {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Dominant eigenvalue of a symmetric PSD operator. Stops when successive
/// Rayleigh quotients agree to `tol` (relative); otherwise reports the last
/// iterate with `converged = false`.
pub fn power_iteration(
    op: impl Fn(&[f64]) -> Vec<f64>,
    dim: usize,
    max_iter: usize,
    tol: f64,
) -> PowerIteration {
    if dim == 0 {
        return PowerIteration {
            value: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    let mut rng = StreamKey::new(0x5eed, StreamRole::Audit, dim, 0).rng();
    let mut v: Vec<f64> = (0..dim).map(|_| 1.0 + 0.1 * rng.gen::<f64>()).collect();
    let norm = norm_sq(&v).sqrt();
    v.iter_mut().for_each(|e| *e /= norm);
    let mut value = 0.0;
    for it in 1..=max_iter {
        let w = op(&v);
        let next: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let wn = norm_sq(&w).sqrt();
        if wn == 0.0 {
            return PowerIteration {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        v = w.into_iter().map(|e| e / wn).collect();
        if (next - value).abs() <= tol * next.abs().max(f64::MIN_POSITIVE) {
            return PowerIteration {
                value: next,
                iterations: it,
                converged: true,
            };
        }
        value = next;
    }
    PowerIteration {
        value,
        iterations: max_iter,
        converged: false,
    }
}

// ------------------------------------------------------------------ constants

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsKind {
    Exact,
    UpperBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    pub l: f64,
    pub l_i: Vec<f64>,
    pub l_max: f64,
    pub l_hat: f64,
    pub mu: f64,
    pub kind: ConstantsKind,
    pub power_iteration_converged: bool,
}

impl SmoothnessConstants {
    pub fn new(l: f64, l_i: Vec<f64>, l_hat: f64, mu: f64, kind: ConstantsKind) -> Self {
        let l_max = l_i.iter().fold(0.0f64, |a, &b| a.max(b));
        Self {
            l,
            l_i,
            l_max,
            l_hat,
            mu,
            kind,
            power_iteration_converged: true,
        }
    }

    pub fn n(&self) -> usize {
        self.l_i.len()
    }
}

// ------------------------------------------------------------------- oracle

#[derive(Debug, Clone)]
pub enum Objective {
    Quadratic(QuadraticProblem),
    LogReg(LogRegProblem),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptReference {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    /// `|grad f_i(x*)|^2` per worker.
    pub grad_norms_at_opt: Vec<f64>,
    /// `|grad f(x*)|` at the returned point.
    pub grad_norm: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit before the tolerance.
    pub usable: bool,
}

impl OptReference {
    /// `(1/n) sum_i |grad f_i(x*)|^2`
    pub fn mean_grad_norm_sq(&self) -> f64 {
        self.grad_norms_at_opt.iter().sum::<f64>() / self.grad_norms_at_opt.len() as f64
    }
}

/// How many samples a stochastic gradient averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    /// Deterministic sweep over the worker's data: the exact gradient.
    Full,
    Sampled(usize),
}

/// Value/gradient oracles for all workers plus their constants.
#[derive(Debug, Clone)]
pub struct ProblemOracle {
    objective: Objective,
    constants: SmoothnessConstants,
    reference: Option<OptReference>,
    homogeneous: bool,
}

impl ProblemOracle {
    pub fn quadratic(problem: QuadraticProblem) -> Self {
        let constants = problem.exact_constants();
        Self {
            objective: Objective::Quadratic(problem),
            constants,
            reference: None,
            homogeneous: false,
        }
    }

    pub fn logreg(problem: LogRegProblem) -> Self {
        let constants = problem.upper_bound_constants();
        let homogeneous = problem.workers.windows(2).all(|w| w[0] == w[1]);
        Self {
            objective: Objective::LogReg(problem),
            constants,
            reference: None,
            homogeneous,
        }
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn n_workers(&self) -> usize {
        match &self.objective {
            Objective::Quadratic(q) => q.workers.len(),
            Objective::LogReg(l) => l.workers.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.objective {
            Objective::Quadratic(q) => q.dim,
            Objective::LogReg(l) => l.dim(),
        }
    }

    /// Every worker holds the same function (`f_i = f`).
    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous
    }

    pub fn constants(&self) -> &SmoothnessConstants {
        &self.constants
    }

    pub fn estimate_constants(&self) -> SmoothnessConstants {
        match &self.objective {
            Objective::Quadratic(q) => q.exact_constants(),
            Objective::LogReg(l) => l.upper_bound_constants(),
        }
    }

    pub fn reference(&self) -> Option<&OptReference> {
        self.reference.as_ref()
    }

    pub fn set_reference(&mut self, reference: OptReference) {
        self.reference = Some(reference);
    }

    /// Known lower bounds `(f*, [f_i*])` valid for every `x`. Logistic loss
    /// and the regularizer are nonnegative, so zero bounds every piece; for
    /// quadratics the bounds are the exact minima when they exist.
    pub fn lower_bounds(&self) -> Option<(f64, Vec<f64>)> {
        match &self.objective {
            Objective::LogReg(l) => Some((0.0, vec![0.0; l.workers.len()])),
            Objective::Quadratic(q) => {
                let f_star = self.reference.as_ref().filter(|r| r.usable)?.f_star;
                let per = q
                    .workers
                    .iter()
                    .map(|w| {
                        let chol = w.a.clone().cholesky()?;
                        let xs: Vec<f64> = chol
                            .solve(&DVector::from_vec(w.b.clone()))
                            .iter()
                            .copied()
                            .collect();
                        Some(w.value(&xs))
                    })
                    .collect::<Option<Vec<f64>>>()?;
                Some((f_star, per))
            }
        }
    }

    pub fn worker_samples(&self, worker: usize) -> usize {
        match &self.objective {
            Objective::Quadratic(q) => q.workers[worker].b_samples.len().max(1),
            Objective::LogReg(l) => l.workers[worker].len(),
        }
    }

    pub fn worker_value(&self, worker: usize, x: &[f64]) -> f64 {
        match &self.objective {
            Objective::Quadratic(q) => q.workers[worker].value(x),
            Objective::LogReg(l) => l.worker_value(worker, x),
        }
    }

    pub fn worker_grad(&self, worker: usize, x: &[f64]) -> Vec<f64> {
        match &self.objective {
            Objective::Quadratic(q) => q.workers[worker].grad(x),
            Objective::LogReg(l) => l.worker_value_grad(worker, x).1,
        }
    }

    pub fn worker_value_grad(&self, worker: usize, x: &[f64]) -> (f64, Vec<f64>) {
        match &self.objective {
            Objective::Quadratic(q) => {
                let w = &q.workers[worker];
                (w.value(x), w.grad(x))
            }
            Objective::LogReg(l) => l.worker_value_grad(worker, x),
        }
    }

    /// `f(x) = (1/n) sum_i f_i(x)`, summed in worker order.
    pub fn value(&self, x: &[f64]) -> f64 {
        let n = self.n_workers();
        (0..n).map(|i| self.worker_value(i, x)).sum::<f64>() / n as f64
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let grads: Vec<Vec<f64>> = (0..self.n_workers())
            .map(|i| self.worker_grad(i, x))
            .collect();
        average_dense(&grads, self.dim())
    }

    pub fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let n = self.n_workers();
        let mut value = 0.0;
        let mut grads = Vec::with_capacity(n);
        for i in 0..n {
            let (v, g) = self.worker_value_grad(i, x);
            value += v;
            grads.push(g);
        }
        (value / n as f64, average_dense(&grads, self.dim()))
    }

    /// Unbiased estimate of `grad f_i(x)` from a with-replacement uniform
    /// minibatch drawn from `rng`.
    pub fn stochastic_grad(
        &self,
        worker: usize,
        x: &[f64],
        batch: BatchSize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        let size = match batch {
            BatchSize::Full => return Ok(self.worker_grad(worker, x)),
            BatchSize::Sampled(0) => return Err(Error::config("batch_size", "must be at least 1")),
            BatchSize::Sampled(b) if b as u64 > 1u64 << 32 => {
                return Err(Error::config("batch_size", "exceeds 2^32"))
            }
            BatchSize::Sampled(b) => b,
        };
        let m = self.worker_samples(worker);
        let batch: Vec<usize> = (0..size).map(|_| rng.gen_range(0..m)).collect();
        Ok(match &self.objective {
            Objective::LogReg(l) => l.batch_grad(worker, &batch, x),
            Objective::Quadratic(q) => {
                let w = &q.workers[worker];
                if w.b_samples.is_empty() {
                    w.grad(x)
                } else {
                    let picked: Vec<Vec<f64>> =
                        batch.iter().map(|&j| w.b_samples[j].clone()).collect();
                    let b = average_dense(&picked, q.dim);
                    let mut g = w.apply(x);
                    for (gi, bi) in g.iter_mut().zip(&b) {
                        *gi -= bi;
                    }
                    g
                }
            }
        })
    }

    /// Exact per-sample gradient variance `E|g_j - grad f_i(x)|^2` for a
    /// single-sample draw at `x`, maximised over workers.
    pub fn sample_variance(&self, x: &[f64]) -> f64 {
        (0..self.n_workers())
            .map(|i| {
                let full = self.worker_grad(i, x);
                let m = self.worker_samples(i);
                (0..m)
                    .map(|j| {
                        let g = match &self.objective {
                            Objective::LogReg(l) => l.batch_grad(i, &[j], x),
                            Objective::Quadratic(q) => {
                                let w = &q.workers[i];
                                if w.b_samples.is_empty() {
                                    return 0.0;
                                }
                                let mut g = w.apply(x);
                                for (gi, bi) in g.iter_mut().zip(&w.b_samples[j]) {
                                    *gi -= bi;
                                }
                                g
                            }
                        };
                        dist_sq(&g, &full)
                    })
                    .sum::<f64>()
                    / m as f64
            })
            .fold(0.0, f64::max)
    }

    /// Minimiser of a convex problem: a linear solve for quadratics, gradient
    /// descent with stepsize `1/L` otherwise (capped at `max_iter`).
    pub fn compute_opt_reference(&self, tolerance: f64, max_iter: usize) -> Result<OptReference> {
        let (x_star, iterations, converged) = match &self.objective {
            Objective::Quadratic(q) => (q.minimizer()?, 0, true),
            Objective::LogReg(_) => {
                if self.constants.l <= 0.0 {
                    return Err(Error::InvalidProblem("smoothness constant is zero".into()));
                }
                let step = 1.0 / self.constants.l;
                let mut x = vec![0.0; self.dim()];
                let mut done = None;
                for it in 0..max_iter {
                    let g = self.grad(&x);
                    if norm_sq(&g).sqrt() <= tolerance {
                        done = Some(it);
                        break;
                    }
                    for (xi, gi) in x.iter_mut().zip(&g) {
                        *xi -= step * gi;
                    }
                }
                match done {
                    Some(it) => (x, it, true),
                    None => (x, max_iter, false),
                }
            }
        };
        let grad_norms_at_opt = (0..self.n_workers())
            .map(|i| norm_sq(&self.worker_grad(i, &x_star)))
            .collect();
        let grad_norm = norm_sq(&self.grad(&x_star)).sqrt();
        Ok(OptReference {
            f_star: self.value(&x_star),
            x_star,
            grad_norms_at_opt,
            grad_norm,
            iterations,
            usable: converged && grad_norm <= tolerance.max(1e-10),
        })
    }
}

// --------------------------------------------------------------------- config

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Quadratic,
    Logreg,
}

/// Synthetic classification data: Gaussian features, labels from a random
/// linear teacher with Gumbel noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticClassification {
    pub samples: usize,
    pub features: usize,
    pub classes: usize,
    #[serde(default = "default_label_noise")]
    pub label_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_label_noise() -> f64 {
    1.0
}

impl SyntheticClassification {
    pub fn build(&self) -> Dataset {
        let mut rng = StreamKey::new(self.seed, StreamRole::Setup, 2, 0).rng();
        let d = self.features;
        let teacher: Vec<Vec<f64>> = (0..self.classes)
            .map(|_| gaussian_vec(&mut rng, d))
            .collect();
        let mut ds = Dataset {
            d_features: d,
            ..Default::default()
        };
        for _ in 0..self.samples {
            let a: Vec<f64> = gaussian_vec(&mut rng, d)
                .into_iter()
                .map(|v| v / (d as f64).sqrt())
                .collect();
            let label = (0..self.classes)
                .map(|c| {
                    let u: f64 = rng.gen_range(1e-12..1.0);
                    let gumbel = -(-u.ln()).ln();
                    let score: f64 = teacher[c].iter().zip(&a).map(|(w, v)| w * v).sum::<f64>();
                    (c, score + self.label_noise * gumbel)
                })
                .max_by(|p, q| p.1.total_cmp(&q.1))
                .map(|p| p.0)
                .unwrap_or(0);
            ds.rows.push(SparseRow {
                indices: (0..d).collect(),
                values: a,
            });
            ds.labels.push(label.to_string());
        }
        ds
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    /// Inline quadratic workers: `[{"a": [[..]], "b": [..]}, ..]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<Vec<QuadraticWorkerConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_quadratic: Option<SyntheticQuadratic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_dataset: Option<SyntheticClassification>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularizer: Option<RegularizerConfig>,
    /// Worker count for dataset-backed problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_workers: Option<usize>,
    /// Raise `d_features` to at least this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_features: Option<usize>,
    #[serde(default)]
    pub scale_features: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticWorkerConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl ProblemConfig {
    pub fn build(&self, partition_cfg: &PartitionConfig) -> Result<ProblemOracle> {
        match self.kind {
            ProblemKind::Quadratic => {
                let q = match (&self.workers, &self.synthetic_quadratic) {
                    (Some(ws), None) => QuadraticProblem::from_dense(
                        ws.iter().map(|w| w.a.clone()).collect(),
                        ws.iter().map(|w| w.b.clone()).collect(),
                    )?,
                    (None, Some(s)) => s.build()?,
                    _ => {
                        return Err(Error::config(
                            "problem",
                            "quadratic needs exactly one of `workers` or `synthetic_quadratic`",
                        ))
                    }
                };
                Ok(ProblemOracle::quadratic(q))
            }
            ProblemKind::Logreg => {
                let mut ds = match (&self.dataset, &self.synthetic_dataset) {
                    (Some(path), None) => Dataset::from_path(path)?,
                    (None, Some(s)) => s.build(),
                    _ => {
                        return Err(Error::config(
                            "problem",
                            "logreg needs exactly one of `dataset` or `synthetic_dataset`",
                        ))
                    }
                };
                if let Some(d) = self.min_features {
                    ds = ds.with_min_features(d);
                }
                if self.scale_features {
                    ds = ds.max_abs_scaled();
                }
                let n = self
                    .n_workers
                    .ok_or_else(|| Error::config("problem.n_workers", "required for logreg"))?;
                let part = partition(
                    ds.n_samples(),
                    n,
                    partition_cfg.strategy,
                    partition_cfg.seed,
                )?;
                let lambda = self.regularizer.map_or(0.0, |r| r.lambda);
                let problem = LogRegProblem::new(&ds, self.classes, part.workers, lambda)?;
                let mut oracle = ProblemOracle::logreg(problem);
                if partition_cfg.strategy == PartitionStrategy::Shared {
                    oracle.homogeneous = true;
                }
                Ok(oracle)
            }
        }
    }
}

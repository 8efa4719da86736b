//! Compression operators and their class parameters.
//!
//! Two classes matter:
//!
//! * contractive, `B(alpha)`: `E|C(x) - x|^2 <= (1 - alpha) |x|^2`;
//! * unbiased, `U(omega)`: `E C(x) = x` and `E|C(x) - x|^2 <= omega |x|^2`.
//!
//! TopK is contractive with `alpha = k/d`, RandK (rescaled by `d/k`) is
//! unbiased with `omega = d/k - 1`, and any unbiased `C` becomes contractive
//! with `alpha = 1/(omega + 1)` after division by `omega + 1`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{StreamKey, StreamRole};
use crate::vector::{norm_sq, SparseVector};

#[derive(Debug, Clone, PartialEq)]
pub enum CompressorKind {
    TopK { k: usize },
    RandK { k: usize },
    Identity,
    Scale { c: f64 },
    ScaledToContractive(Box<CompressorSpec>),
}

/// Parameter(s) a compressor is certified for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeclaredClass {
    Contractive {
        alpha: f64,
    },
    Unbiased {
        omega: f64,
    },
    /// Identity belongs to both classes.
    Both {
        alpha: f64,
        omega: f64,
    },
}

/// How a compressed model difference is written into the receiver's shift.
///
/// A selection compressor returns, on its support, the input coordinates
/// unchanged, so `w + C(x - w)` equals `x` on the support. Such messages
/// carry the target coordinates and the receiver overwrites; every other
/// compressor sends the difference and the receiver adds. Both encodings
/// store the same number of coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftEncoding {
    Overwrite,
    Delta,
}

/// Immutable compressor definition bound to an ambient dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressorSpec {
    kind: CompressorKind,
    dim: usize,
}

impl CompressorSpec {
    pub fn top_k(k: usize, dim: usize) -> Result<Self> {
        check_k(k, dim)?;
        Ok(Self {
            kind: CompressorKind::TopK { k },
            dim,
        })
    }

    pub fn rand_k(k: usize, dim: usize) -> Result<Self> {
        check_k(k, dim)?;
        Ok(Self {
            kind: CompressorKind::RandK { k },
            dim,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            kind: CompressorKind::Identity,
            dim,
        }
    }

    pub fn scale(c: f64, dim: usize) -> Result<Self> {
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::InvalidCompressor(format!(
                "scale factor must lie in (0, 1], got {c}"
            )));
        }
        Ok(Self {
            kind: CompressorKind::Scale { c },
            dim,
        })
    }

    /// `C / (omega + 1)` for an unbiased `C`.
    pub fn scaled_unbiased(inner: CompressorSpec) -> Result<Self> {
        if inner.omega().is_err() {
            return Err(Error::ClassMisuse(format!(
                "scaled_unbiased needs an unbiased inner compressor, got {}",
                inner.name()
            )));
        }
        let dim = inner.dim;
        Ok(Self {
            kind: CompressorKind::ScaledToContractive(Box::new(inner)),
            dim,
        })
    }

    pub fn kind(&self) -> &CompressorKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> String {
        match &self.kind {
            CompressorKind::TopK { k } => format!("topk(k={k})"),
            CompressorKind::RandK { k } => format!("randk(k={k})"),
            CompressorKind::Identity => "identity".to_string(),
            CompressorKind::Scale { c } => format!("scale(c={c})"),
            CompressorKind::ScaledToContractive(inner) => {
                format!("scaled_unbiased({})", inner.name())
            }
        }
    }

    pub fn declared_class(&self) -> DeclaredClass {
        match &self.kind {
            CompressorKind::TopK { k } => DeclaredClass::Contractive {
                alpha: *k as f64 / self.dim as f64,
            },
            CompressorKind::RandK { k } => DeclaredClass::Unbiased {
                omega: self.dim as f64 / *k as f64 - 1.0,
            },
            CompressorKind::Identity => DeclaredClass::Both {
                alpha: 1.0,
                omega: 0.0,
            },
            CompressorKind::Scale { c } => DeclaredClass::Contractive {
                alpha: 1.0 - (1.0 - c) * (1.0 - c),
            },
            CompressorKind::ScaledToContractive(inner) => {
                let omega = inner.omega().expect("checked at construction");
                DeclaredClass::Contractive {
                    alpha: 1.0 / (omega + 1.0),
                }
            }
        }
    }

    /// Contraction parameter; an error for purely unbiased compressors.
    pub fn alpha(&self) -> Result<f64> {
        match self.declared_class() {
            DeclaredClass::Contractive { alpha } | DeclaredClass::Both { alpha, .. } => Ok(alpha),
            DeclaredClass::Unbiased { .. } => Err(Error::ClassMisuse(format!(
                "{} is unbiased, not contractive; wrap it in scaled_unbiased",
                self.name()
            ))),
        }
    }

    /// Variance parameter; an error for biased (contractive-only) compressors.
    pub fn omega(&self) -> Result<f64> {
        match self.declared_class() {
            DeclaredClass::Unbiased { omega } | DeclaredClass::Both { omega, .. } => Ok(omega),
            DeclaredClass::Contractive { .. } => Err(Error::ClassMisuse(format!(
                "{} is a biased contractive compressor and has no omega",
                self.name()
            ))),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match &self.kind {
            CompressorKind::RandK { .. } => false,
            CompressorKind::ScaledToContractive(inner) => inner.is_deterministic(),
            _ => true,
        }
    }

    pub fn shift_encoding(&self) -> ShiftEncoding {
        match self.kind {
            CompressorKind::TopK { .. } | CompressorKind::Identity => ShiftEncoding::Overwrite,
            _ => ShiftEncoding::Delta,
        }
    }

    /// Number of coordinates every output stores.
    pub fn stored_per_message(&self) -> usize {
        match &self.kind {
            CompressorKind::TopK { k } | CompressorKind::RandK { k } => *k,
            CompressorKind::Identity | CompressorKind::Scale { .. } => self.dim,
            CompressorKind::ScaledToContractive(inner) => inner.stored_per_message(),
        }
    }

    /// Bind a fresh random stream to this compressor.
    pub fn stream(&self, key: StreamKey) -> CompressorStream<'_> {
        CompressorStream {
            spec: self,
            rng: key.rng(),
        }
    }

    /// Every possible output of `C(x)` with its probability, when the
    /// support is small enough to list (RandK with `C(d, k) <= limit`).
    pub fn enumerate_outcomes(
        &self,
        x: &[f64],
        limit: usize,
    ) -> Result<Option<Vec<(f64, Vec<f64>)>>> {
        self.check_dim(x)?;
        Ok(match &self.kind {
            CompressorKind::RandK { k } => {
                let count = binomial(self.dim, *k);
                if count > limit as f64 {
                    None
                } else {
                    let p = 1.0 / count;
                    let outcomes = KSubsets::new(self.dim, *k)
                        .map(|subset| (p, rand_k_output(x, &subset, self.dim).to_dense()))
                        .collect();
                    Some(outcomes)
                }
            }
            CompressorKind::ScaledToContractive(inner) => {
                let omega = inner.omega()?;
                inner.enumerate_outcomes(x, limit)?.map(|outs| {
                    outs.into_iter()
                        .map(|(p, v)| (p, v.into_iter().map(|e| e / (omega + 1.0)).collect()))
                        .collect()
                })
            }
            _ => {
                let mut stream = self.stream(StreamKey::new(0, StreamRole::Audit, 0, 0));
                Some(vec![(1.0, stream.compress(x)?.to_dense())])
            }
        })
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

fn check_k(k: usize, dim: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidCompressor("k must be at least 1".into()));
    }
    if k > dim {
        return Err(Error::InvalidCompressor(format!(
            "k = {k} exceeds dimension {dim}"
        )));
    }
    Ok(())
}

/// A compressor together with the random stream feeding one application.
pub struct CompressorStream<'a> {
    spec: &'a CompressorSpec,
    rng: ChaCha8Rng,
}

impl CompressorStream<'_> {
    pub fn spec(&self) -> &CompressorSpec {
        self.spec
    }

    pub fn compress(&mut self, x: &[f64]) -> Result<SparseVector> {
        compress_with(self.spec, x, &mut self.rng)
    }
}

fn compress_with(spec: &CompressorSpec, x: &[f64], rng: &mut ChaCha8Rng) -> Result<SparseVector> {
    spec.check_dim(x)?;
    let d = spec.dim;
    Ok(match &spec.kind {
        CompressorKind::Identity => SparseVector::dense(x.to_vec()),
        CompressorKind::Scale { c } => SparseVector::dense(x.iter().map(|v| c * v).collect()),
        CompressorKind::TopK { k } => {
            let idx = top_k_indices(x, *k);
            let vals = idx.iter().map(|&i| x[i]).collect();
            SparseVector::from_sorted_unchecked(d, idx, vals)
        }
        CompressorKind::RandK { k } => {
            let subset = sample_subset(d, *k, rng);
            rand_k_output(x, &subset, d)
        }
        CompressorKind::ScaledToContractive(inner) => {
            let omega = inner.omega()?;
            let out = compress_with(inner, x, rng)?;
            let vals = out.values().iter().map(|v| v / (omega + 1.0)).collect();
            SparseVector::from_sorted_unchecked(d, out.indices().to_vec(), vals)
        }
    })
}

/// Indices of the `k` largest `|x_i|`, ties going to the lower index,
/// returned in increasing order.
pub fn top_k_indices(x: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    if k < x.len() {
        let order = |a: &usize, b: &usize| x[*b].abs().total_cmp(&x[*a].abs()).then(a.cmp(b));
        idx.select_nth_unstable_by(k, order);
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// Uniform `k`-subset of `0..d` by a partial Fisher-Yates shuffle, sorted.
fn sample_subset(d: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..d).collect();
    for i in 0..k {
        let j = rng.gen_range(i..d);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

fn rand_k_output(x: &[f64], subset: &[usize], d: usize) -> SparseVector {
    let scale = d as f64 / subset.len() as f64;
    let vals = subset.iter().map(|&i| x[i] * scale).collect();
    SparseVector::from_sorted_unchecked(d, subset.to_vec(), vals)
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k)
        .fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        .round()
}

/// Lexicographic iterator over `k`-subsets of `0..n`.
pub struct KSubsets {
    n: usize,
    current: Option<Vec<usize>>,
}

impl KSubsets {
    pub fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            current: if k <= n { Some((0..k).collect()) } else { None },
        }
    }
}

impl Iterator for KSubsets {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let k = out.len();
        let mut next = out.clone();
        let mut i = k;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if next[i] < self.n - k + i {
                next[i] += 1;
                for j in i + 1..k {
                    next[j] = next[j - 1] + 1;
                }
                self.current = Some(next);
                break;
            }
        }
        Some(out)
    }
}

/// Monte-Carlo (or exact, where enumerable) audit of a compressor against
/// its declared class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassCheckReport {
    /// Max over trials of `E|C(x) - x|^2 / |x|^2`.
    pub worst_contraction_ratio: f64,
    /// Mean over trials of `|E C(x) - x| / |x|`.
    pub mean_bias_norm: f64,
    /// Max over trials of `E|C(x) - x|^2 / (omega |x|^2)`; absent when the
    /// compressor is not unbiased or `omega = 0`.
    pub variance_ratio: Option<f64>,
    /// Whether expectations were computed by enumeration.
    pub exact: bool,
    pub trials: usize,
    /// Declared-class inequalities hold within the tolerance.
    pub consistent: bool,
}

const ENUMERATION_LIMIT: usize = 1000;
const MC_DRAWS: usize = 2000;

pub fn empirical_class_check(
    spec: &CompressorSpec,
    trials: usize,
    seed: u64,
    tolerance: f64,
) -> Result<ClassCheckReport> {
    use rand_distr::{Distribution, StandardNormal};

    let trials = trials.max(1);
    let d = spec.dim;
    let mut worst: f64 = 0.0;
    let mut bias_sum = 0.0;
    let mut var_ratio: Option<f64> = None;
    let omega = spec.omega().ok();
    let mut exact = true;

    for trial in 0..trials {
        let mut rng = StreamKey::new(seed, StreamRole::Audit, 0, trial).rng();
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let xn = norm_sq(&x);
        if xn == 0.0 {
            continue;
        }
        let (mean, err_sq) = match spec.enumerate_outcomes(&x, ENUMERATION_LIMIT)? {
            Some(outcomes) => expectation(&x, outcomes.into_iter()),
            None => {
                exact = false;
                let draws = (0..MC_DRAWS).map(|r| {
                    let key = StreamKey::new(seed, StreamRole::Audit, trial + 1, r);
                    let out = spec
                        .stream(key)
                        .compress(&x)
                        .expect("dimension checked")
                        .to_dense();
                    (1.0 / MC_DRAWS as f64, out)
                });
                expectation(&x, draws)
            }
        };
        let ratio = err_sq / xn;
        worst = worst.max(ratio);
        let bias: f64 = mean
            .iter()
            .zip(&x)
            .map(|(m, v)| (m - v) * (m - v))
            .sum::<f64>()
            .sqrt();
        bias_sum += bias / xn.sqrt();
        if let Some(om) = omega.filter(|&o| o > 0.0) {
            let r = ratio / om;
            var_ratio = Some(var_ratio.map_or(r, |v: f64| v.max(r)));
        }
    }

    let mean_bias_norm = bias_sum / trials as f64;
    let consistent = match spec.declared_class() {
        DeclaredClass::Contractive { alpha } => worst <= 1.0 - alpha + tolerance,
        DeclaredClass::Unbiased { .. } | DeclaredClass::Both { .. } => {
            mean_bias_norm <= tolerance
                && var_ratio.map_or(worst <= tolerance, |v| v <= 1.0 + tolerance)
        }
    };
    Ok(ClassCheckReport {
        worst_contraction_ratio: worst,
        mean_bias_norm,
        variance_ratio: var_ratio,
        exact,
        trials,
        consistent,
    })
}

fn expectation(x: &[f64], outcomes: impl Iterator<Item = (f64, Vec<f64>)>) -> (Vec<f64>, f64) {
    let mut mean = vec![0.0; x.len()];
    let mut err_sq = 0.0;
    for (p, out) in outcomes {
        for (m, o) in mean.iter_mut().zip(&out) {
            *m += p * o;
        }
        err_sq += p * out
            .iter()
            .zip(x)
            .map(|(o, v)| (o - v) * (o - v))
            .sum::<f64>();
    }
    (mean, err_sq)
}

/// Run-config form: `{"kind": "topk", "k": 2}` and friends. The dimension
/// comes from the problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressorConfig {
    pub kind: CompressorConfigKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressorConfigKind {
    Topk,
    Randk,
    Identity,
    Scale,
    ScaledUnbiased,
}

impl CompressorConfig {
    pub fn identity() -> Self {
        Self {
            kind: CompressorConfigKind::Identity,
            k: None,
            c: None,
        }
    }

    pub fn top_k(k: usize) -> Self {
        Self {
            kind: CompressorConfigKind::Topk,
            k: Some(k),
            c: None,
        }
    }

    pub fn rand_k(k: usize) -> Self {
        Self {
            kind: CompressorConfigKind::Randk,
            k: Some(k),
            c: None,
        }
    }

    pub fn build(&self, dim: usize) -> Result<CompressorSpec> {
        let k = || {
            self.k
                .ok_or_else(|| Error::InvalidCompressor(format!("{:?} requires `k`", self.kind)))
        };
        match self.kind {
            CompressorConfigKind::Topk => CompressorSpec::top_k(k()?, dim),
            CompressorConfigKind::Randk => CompressorSpec::rand_k(k()?, dim),
            CompressorConfigKind::Identity => Ok(CompressorSpec::identity(dim)),
            CompressorConfigKind::Scale => CompressorSpec::scale(
                self.c
                    .ok_or_else(|| Error::InvalidCompressor("scale requires `c`".into()))?,
                dim,
            ),
            CompressorConfigKind::ScaledUnbiased => {
                let inner = match self.k {
                    Some(k) => CompressorSpec::rand_k(k, dim)?,
                    None => CompressorSpec::identity(dim),
                };
                CompressorSpec::scaled_unbiased(inner)
            }
        }
    }
}

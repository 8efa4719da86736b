//! Closed-form stepsizes, horizons, ABC constants and Lyapunov functions.
//!
//! Convention: a bound whose denominator contains a zero factor is `+inf`
//! and therefore never selected by a `min`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{OptReference, ProblemOracle, SmoothnessConstants};
use crate::vector::{dist_sq, norm_sq};

/// `num / den`, with `+inf` for a zero denominator.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

fn min_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    pub n: usize,
    pub omega: f64,
    pub alpha: f64,
    pub l: f64,
    pub l_max: f64,
    pub l_hat: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_sq: Option<f64>,
    /// `f(x^0) - f*` (or against any lower bound on `f`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta0: Option<f64>,
    /// `f* - (1/n) sum_i f_i*`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_star: Option<f64>,
    /// Strong-growth parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

impl TheoryInputs {
    pub fn from_constants(c: &SmoothnessConstants, omega: f64, alpha: f64) -> Self {
        Self {
            n: c.n(),
            omega,
            alpha,
            l: c.l,
            l_max: c.l_max,
            l_hat: c.l_hat,
            mu: c.mu,
            sigma_sq: None,
            delta0: None,
            delta_star: None,
            growth: None,
            eps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("omega", self.omega),
            ("l", self.l),
            ("l_max", self.l_max),
            ("l_hat", self.l_hat),
            ("mu", self.mu),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Theory(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("sigma_sq", self.sigma_sq),
            ("delta_star", self.delta_star),
            ("growth", self.growth),
            ("eps", self.eps),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0) {
                    return Err(Error::Theory(format!(
                        "{name} must be nonnegative, got {v}"
                    )));
                }
            }
        }
        if self.n == 0 {
            return Err(Error::Theory("n must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Theory(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.l == 0.0 {
            return Err(Error::Theory("L = 0: stepsize bounds are undefined".into()));
        }
        if self.mu > self.l * (1.0 + 1e-12) {
            return Err(Error::Theory(format!(
                "mu = {} exceeds L = {}",
                self.mu, self.l
            )));
        }
        Ok(())
    }

    fn nf(&self) -> f64 {
        self.n as f64
    }

    fn need(&self, name: &str, v: Option<f64>) -> Result<f64> {
        v.ok_or_else(|| Error::Theory(format!("input `{name}` is required here")))
    }
}

/// A bound together with the terms whose minimum (or maximum) it is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    pub terms: Vec<(String, f64)>,
}

impl Bound {
    /// Terms equal to `+inf` (e.g. compressor terms at `omega = 0`) are
    /// inactive and left out of `terms`.
    fn min(terms: Vec<(&str, f64)>) -> Self {
        let values: Vec<f64> = terms.iter().map(|t| t.1).collect();
        Self {
            value: min_of(&values),
            terms: terms
                .into_iter()
                .filter(|t| t.1 != f64::INFINITY)
                .map(|(n, v)| (n.to_string(), v))
                .collect(),
        }
    }

    fn max(terms: Vec<(&str, f64)>) -> Self {
        let values: Vec<f64> = terms.iter().map(|t| t.1).collect();
        Self {
            value: max_of(&values),
            terms: terms.into_iter().map(|(n, v)| (n.to_string(), v)).collect(),
        }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.0 == name).map(|t| t.1)
    }
}

fn compressor_terms(i: &TheoryInputs) -> Vec<(&'static str, f64)> {
    let n = i.nf();
    vec![
        ("n/(160 omega L_max)", ratio(n, 160.0 * i.omega * i.l_max)),
        (
            "sqrt(n alpha)/(20 sqrt(omega) L_hat)",
            ratio((n * i.alpha).sqrt(), 20.0 * i.omega.sqrt() * i.l_hat),
        ),
        ("alpha/(100 L)", ratio(i.alpha, 100.0 * i.l)),
    ]
}

/// EF21-P + DIANA, strongly convex (exact or stochastic gradients).
pub fn stepsize_diana_strong(i: &TheoryInputs) -> Result<Bound> {
    i.validate()?;
    let mut terms = compressor_terms(i);
    terms.push(("1/((omega+1) mu)", ratio(1.0, (i.omega + 1.0) * i.mu)));
    Ok(Bound::min(terms))
}

/// EF21-P + DCGD, strongly convex.
pub fn stepsize_dcgd_strong(i: &TheoryInputs) -> Result<Bound> {
    i.validate()?;
    Ok(Bound::min(compressor_terms(i)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Diana,
    Dcgd,
}

/// General convex (`mu = 0`) stepsize; identical caps for both families.
pub fn stepsize_convex_general(i: &TheoryInputs, _family: Family) -> Result<Bound> {
    i.validate()?;
    Ok(Bound::min(compressor_terms(i)))
}

/// EF21-P alone, strongly convex.
pub fn stepsize_ef21p_strong(i: &TheoryInputs) -> Result<f64> {
    i.validate()?;
    Ok(i.alpha / (16.0 * i.l))
}

pub fn beta_diana(omega: f64) -> f64 {
    1.0 / (omega + 1.0)
}

/// Radius `8 omega/(n mu) * (1/n) sum_i |grad f_i(x*)|^2` around `x*`
/// reached by EF21-P + DCGD under strong convexity.
pub fn dcgd_neighborhood(i: &TheoryInputs, mean_grad_norm_sq_at_opt: f64) -> f64 {
    if i.omega == 0.0 || mean_grad_norm_sq_at_opt == 0.0 {
        return 0.0;
    }
    8.0 * i.omega / (i.nf() * i.mu) * mean_grad_norm_sq_at_opt
}

/// Statistical term `24 (omega+1) sigma^2 / (mu n)` of stochastic
/// EF21-P + DIANA.
pub fn diana_stochastic_neighborhood(i: &TheoryInputs) -> Result<f64> {
    let s = i.need("sigma_sq", i.sigma_sq)?;
    if s == 0.0 {
        return Ok(0.0);
    }
    Ok(24.0 * (i.omega + 1.0) * s / (i.mu * i.nf()))
}

// ------------------------------------------------------------------------ ABC

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbcCase {
    /// Exact worker gradients.
    FullGrad,
    /// Exact gradients plus strong growth.
    StrongGrowth,
    /// Stochastic worker gradients with bounded variance.
    BoundedVar,
    /// Stochastic gradients, identical worker functions.
    Homogeneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbcConstants {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub case: AbcCase,
}

pub fn abc_constants(case: AbcCase, i: &TheoryInputs) -> Result<AbcConstants> {
    i.validate()?;
    let n = i.nf();
    let (a, b, c) = match case {
        AbcCase::FullGrad => {
            let a = i.omega * i.l_max / n;
            (a, 1.0, 2.0 * a * i.need("delta_star", i.delta_star)?)
        }
        AbcCase::StrongGrowth => (0.0, i.need("growth", i.growth)? * i.omega / n + 1.0, 0.0),
        AbcCase::BoundedVar => {
            let a = i.omega * i.l_max / n;
            let s = i.need("sigma_sq", i.sigma_sq)?;
            (
                a,
                1.0,
                2.0 * a * i.need("delta_star", i.delta_star)? + (i.omega + 1.0) * s / n,
            )
        }
        AbcCase::Homogeneous => {
            let s = i.need("sigma_sq", i.sigma_sq)?;
            (0.0, i.omega / n + 1.0, (i.omega + 1.0) * s / n)
        }
    };
    Ok(AbcConstants { a, b, c, case })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepsizeHorizon {
    pub gamma: Bound,
    /// Real-valued horizon bound (before rounding up).
    pub horizon: Bound,
    pub rounds: u64,
}

fn ceil_rounds(t: f64) -> u64 {
    if t <= 0.0 {
        0
    } else if t >= u64::MAX as f64 {
        u64::MAX
    } else {
        t.ceil() as u64
    }
}

fn horizon_prefactor(i: &TheoryInputs) -> Result<(f64, f64)> {
    let eps = i.need("eps", i.eps)?;
    if eps <= 0.0 {
        return Err(Error::Theory("eps must be positive".into()));
    }
    let delta0 = i.need("delta0", i.delta0)?;
    Ok((eps, delta0))
}

/// `T >= (48 Delta0 L / eps) max{8/alpha, 4B, 96 Delta0 A/eps, 16 C/eps}`.
pub fn horizon_abc(i: &TheoryInputs, abc: &AbcConstants) -> Result<Bound> {
    i.validate()?;
    let (eps, delta0) = horizon_prefactor(i)?;
    let pre = 48.0 * delta0.max(0.0) * i.l / eps;
    let inner = Bound::max(vec![
        ("8/alpha", 8.0 / i.alpha),
        ("4B", 4.0 * abc.b),
        ("96 Delta0 A/eps", 96.0 * delta0 * abc.a / eps),
        ("16C/eps", 16.0 * abc.c / eps),
    ]);
    Ok(Bound {
        value: pre * inner.value,
        terms: inner.terms,
    })
}

/// Stepsize at a given horizon.
pub fn stepsize_abc_at(i: &TheoryInputs, abc: &AbcConstants, rounds: f64) -> Result<Bound> {
    i.validate()?;
    let eps = i.need("eps", i.eps)?;
    Ok(Bound::min(vec![
        ("alpha/(8L)", i.alpha / (8.0 * i.l)),
        ("1/(4BL)", ratio(1.0, 4.0 * abc.b * i.l)),
        (
            "1/sqrt(2ALT)",
            ratio(1.0, (2.0 * abc.a * i.l * rounds).sqrt()),
        ),
        ("eps/(16CL)", ratio(eps, 16.0 * abc.c * i.l)),
    ]))
}

/// Horizon first, then the stepsize at that horizon. `Delta0 <= 0` means the
/// start is already optimal: zero rounds.
pub fn stepsize_abc(i: &TheoryInputs, abc: &AbcConstants) -> Result<StepsizeHorizon> {
    let horizon = horizon_abc(i, abc)?;
    let rounds = ceil_rounds(horizon.value);
    let gamma = stepsize_abc_at(i, abc, rounds as f64)?;
    Ok(StepsizeHorizon {
        gamma,
        horizon,
        rounds,
    })
}

/// EF21-P alone, nonconvex: `T >= 384 Delta0 L / (alpha eps)` at `gamma = alpha/(8L)`.
pub fn ef21p_nonconvex(i: &TheoryInputs) -> Result<StepsizeHorizon> {
    i.validate()?;
    let (eps, delta0) = horizon_prefactor(i)?;
    let t = 384.0 * delta0.max(0.0) * i.l / (i.alpha * eps);
    Ok(StepsizeHorizon {
        gamma: Bound::min(vec![("alpha/(8L)", i.alpha / (8.0 * i.l))]),
        horizon: Bound {
            value: t,
            terms: vec![("384 Delta0 L/(alpha eps)".into(), t)],
        },
        rounds: ceil_rounds(t),
    })
}

/// EF21-P + DCGD, general nonconvex, exact gradients.
pub fn theorem_dcgd_nonconvex(i: &TheoryInputs) -> Result<StepsizeHorizon> {
    i.validate()?;
    let (eps, delta0) = horizon_prefactor(i)?;
    let ds = i.need("delta_star", i.delta_star)?;
    let n = i.nf();
    let inner = Bound::max(vec![
        ("8/alpha", 8.0 / i.alpha),
        (
            "96 Delta0 A/eps",
            96.0 * delta0 * i.omega * i.l_max / (n * eps),
        ),
        ("16C/eps", 32.0 * ds * i.omega * i.l_max / (n * eps)),
    ]);
    let t = 48.0 * delta0.max(0.0) * i.l / eps * inner.value;
    let rounds = ceil_rounds(t);
    let gamma = Bound::min(vec![
        ("alpha/(8L)", i.alpha / (8.0 * i.l)),
        (
            "1/sqrt(2ALT)",
            ratio(
                n.sqrt(),
                (2.0 * i.omega * i.l * i.l_max * rounds as f64).sqrt(),
            ),
        ),
        (
            "eps/(16CL)",
            ratio(n * eps, 32.0 * ds * i.omega * i.l * i.l_max),
        ),
    ]);
    Ok(StepsizeHorizon {
        gamma,
        horizon: Bound {
            value: t,
            terms: inner.terms,
        },
        rounds,
    })
}

/// EF21-P + DCGD under strong growth, as stated by that theorem.
pub fn theorem_dcgd_strong_growth(i: &TheoryInputs) -> Result<StepsizeHorizon> {
    i.validate()?;
    let (eps, delta0) = horizon_prefactor(i)?;
    let d = i.need("growth", i.growth)?;
    let n = i.nf();
    let inner = Bound::max(vec![
        ("8/alpha", 8.0 / i.alpha),
        ("4B", 4.0 * d * i.omega / n),
    ]);
    let t = 48.0 * delta0.max(0.0) * i.l / eps * inner.value;
    let gamma = Bound::min(vec![
        ("alpha/(8L)", i.alpha / (8.0 * i.l)),
        ("1/(4BL)", ratio(n, 4.0 * d * i.omega * i.l)),
    ]);
    Ok(StepsizeHorizon {
        gamma,
        horizon: Bound {
            value: t,
            terms: inner.terms,
        },
        rounds: ceil_rounds(t),
    })
}

/// EF21-P + DCGD, homogeneous workers with stochastic gradients.
pub fn theorem_dcgd_homogeneous(i: &TheoryInputs) -> Result<StepsizeHorizon> {
    i.validate()?;
    let (eps, delta0) = horizon_prefactor(i)?;
    let s = i.need("sigma_sq", i.sigma_sq)?;
    let n = i.nf();
    let growth = i.omega / n + 1.0;
    let inner = Bound::max(vec![
        ("8/alpha", 8.0 / i.alpha),
        ("4B", 4.0 * growth),
        ("16C/eps", 16.0 * (i.omega + 1.0) * s / (n * eps)),
    ]);
    let t = 48.0 * delta0.max(0.0) * i.l / eps * inner.value;
    let gamma = Bound::min(vec![
        ("alpha/(8L)", i.alpha / (8.0 * i.l)),
        ("1/(4BL)", 1.0 / (4.0 * growth * i.l)),
        (
            "eps/(16CL)",
            ratio(n * eps, 16.0 * (i.omega + 1.0) * s * i.l),
        ),
    ]);
    Ok(StepsizeHorizon {
        gamma,
        horizon: Bound {
            value: t,
            terms: inner.terms,
        },
        rounds: ceil_rounds(t),
    })
}

// ------------------------------------------------------------------ Lyapunov

/// `(1/2 gamma)|x - x*|^2 + f(x) - f* + (8 gamma omega (omega+1)/n^2) sum_i |h_i - grad f_i(x*)|^2`
pub fn lyapunov_diana(
    x: &[f64],
    h_workers: &[Vec<f64>],
    gamma: f64,
    omega: f64,
    oracle: &ProblemOracle,
    reference: Option<&OptReference>,
) -> Result<f64> {
    let r =
        reference.ok_or_else(|| Error::MissingReference("Lyapunov function needs x*".into()))?;
    let base = lyapunov_plain(x, gamma, oracle, r);
    if omega == 0.0 {
        return Ok(base);
    }
    let n = oracle.n_workers();
    if h_workers.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: h_workers.len(),
        });
    }
    let shift: f64 = h_workers
        .iter()
        .enumerate()
        .map(|(i, h)| dist_sq(h, &oracle.worker_grad(i, &r.x_star)))
        .sum();
    let nf = n as f64;
    Ok(base + 8.0 * gamma * omega * (omega + 1.0) / (nf * nf) * shift)
}

/// `(1/2 gamma)|x - x*|^2 + f(x) - f*`
pub fn lyapunov_plain(x: &[f64], gamma: f64, oracle: &ProblemOracle, r: &OptReference) -> f64 {
    dist_sq(x, &r.x_star) / (2.0 * gamma) + (oracle.value(x) - r.f_star)
}

/// Proof weights `kappa <= 8 gamma omega/(n beta)` and
/// `nu <= 192 gamma omega L_hat^2/(n alpha) + 32 L/alpha`; reported only.
pub fn proof_weights(i: &TheoryInputs, gamma: f64, beta: f64) -> (f64, f64) {
    let n = i.nf();
    let kappa = if i.omega == 0.0 {
        0.0
    } else {
        8.0 * gamma * i.omega / (n * beta)
    };
    let nu = 192.0 * gamma * i.omega * i.l_hat * i.l_hat / (n * i.alpha) + 32.0 * i.l / i.alpha;
    (kappa, nu)
}

// ------------------------------------------------------------- constant audit

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`
    pub slack: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub checks: Vec<InequalityCheck>,
    pub all_hold: bool,
}

/// `L <= L_hat <= L_max <= n L` and `L_hat <= sqrt(n) L`, with a relative
/// rounding allowance of 1e-12.
pub fn lemma1_audit(c: &SmoothnessConstants) -> Lemma1Report {
    let n = c.n() as f64;
    let pairs = [
        ("L_hat <= L_max", c.l_hat, c.l_max),
        ("L_max <= n L", c.l_max, n * c.l),
        ("L <= L_hat", c.l, c.l_hat),
        ("L_hat <= sqrt(n) L", c.l_hat, n.sqrt() * c.l),
    ];
    let checks: Vec<InequalityCheck> = pairs
        .iter()
        .map(|&(name, lhs, rhs)| InequalityCheck {
            name: name.into(),
            lhs,
            rhs,
            slack: rhs - lhs,
            holds: lhs <= rhs + 1e-12 * rhs.abs().max(lhs.abs()),
        })
        .collect();
    Lemma1Report {
        all_hold: checks.iter().all(|c| c.holds),
        checks,
    }
}

// -------------------------------------------------------------------- report

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbcRow {
    pub constants: AbcConstants,
    pub schedule: StepsizeHorizon,
}

/// Everything computable from a set of inputs; sections whose inputs are
/// missing are omitted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoryReport {
    pub inputs: TheoryInputs,
    pub beta: f64,
    pub gamma_gd: f64,
    pub gamma_ef21p_strong: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_diana_strong: Option<Bound>,
    pub gamma_dcgd_strong: Bound,
    pub gamma_convex_general: Bound,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dcgd_neighborhood: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diana_stochastic_neighborhood: Option<f64>,
    pub abc: Vec<AbcRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ef21p_nonconvex: Option<StepsizeHorizon>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dcgd_nonconvex: Option<StepsizeHorizon>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dcgd_strong_growth: Option<StepsizeHorizon>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dcgd_homogeneous: Option<StepsizeHorizon>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lemma1: Option<Lemma1Report>,
    pub kappa: f64,
    pub nu: f64,
}

impl TheoryReport {
    pub fn compute(
        inputs: &TheoryInputs,
        constants: Option<&SmoothnessConstants>,
        mean_grad_norm_sq_at_opt: Option<f64>,
    ) -> Result<Self> {
        inputs.validate()?;
        let beta = beta_diana(inputs.omega);
        let gamma_dcgd_strong = stepsize_dcgd_strong(inputs)?;
        let gamma_diana_strong = if inputs.mu > 0.0 {
            Some(stepsize_diana_strong(inputs)?)
        } else {
            None
        };
        let gamma_for_weights = gamma_diana_strong
            .as_ref()
            .unwrap_or(&gamma_dcgd_strong)
            .value;
        let (kappa, nu) = proof_weights(inputs, gamma_for_weights, beta);
        let abc = [
            AbcCase::FullGrad,
            AbcCase::StrongGrowth,
            AbcCase::BoundedVar,
            AbcCase::Homogeneous,
        ]
        .into_iter()
        .filter_map(|case| {
            let constants = abc_constants(case, inputs).ok()?;
            let schedule = stepsize_abc(inputs, &constants).ok()?;
            Some(AbcRow {
                constants,
                schedule,
            })
        })
        .collect();
        Ok(Self {
            inputs: inputs.clone(),
            beta,
            gamma_gd: 1.0 / inputs.l,
            gamma_ef21p_strong: stepsize_ef21p_strong(inputs)?,
            gamma_diana_strong,
            gamma_convex_general: stepsize_convex_general(inputs, Family::Diana)?,
            gamma_dcgd_strong,
            dcgd_neighborhood: mean_grad_norm_sq_at_opt
                .filter(|_| inputs.mu > 0.0)
                .map(|m| dcgd_neighborhood(inputs, m)),
            diana_stochastic_neighborhood: if inputs.mu > 0.0 {
                diana_stochastic_neighborhood(inputs).ok()
            } else {
                None
            },
            abc,
            ef21p_nonconvex: ef21p_nonconvex(inputs).ok(),
            dcgd_nonconvex: theorem_dcgd_nonconvex(inputs).ok(),
            dcgd_strong_growth: theorem_dcgd_strong_growth(inputs).ok(),
            dcgd_homogeneous: theorem_dcgd_homogeneous(inputs).ok(),
            lemma1: constants.map(lemma1_audit),
            kappa,
            nu,
        })
    }
}

/// `|g|^2` helper kept next to the bounds that consume it.
pub fn grad_norm_sq(g: &[f64]) -> f64 {
    norm_sq(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{ConstantsKind, QuadraticProblem};

    fn desk() -> TheoryInputs {
        TheoryInputs {
            n: 100,
            omega: 9.0,
            alpha: 0.1,
            l: 1.0,
            l_max: 1.0,
            l_hat: 1.0,
            mu: 0.01,
            sigma_sq: None,
            delta0: None,
            delta_star: None,
            growth: None,
            eps: None,
        }
    }

    #[test]
    fn diana_strong_desk_values() {
        let b = stepsize_diana_strong(&desk()).unwrap();
        let t: Vec<f64> = b.terms.iter().map(|t| t.1).collect();
        assert!((t[0] - 100.0 / 1440.0).abs() < 1e-15);
        assert!((t[1] - 10f64.sqrt() / 60.0).abs() < 1e-15);
        assert!((t[2] - 0.001).abs() < 1e-18);
        assert!((t[3] - 10.0).abs() < 1e-12);
        assert_eq!(b.value, t[2]);
        assert_eq!(stepsize_dcgd_strong(&desk()).unwrap().value, b.value);
    }

    #[test]
    fn zero_omega_drops_compressor_terms() {
        let mut i = desk();
        i.omega = 0.0;
        let b = stepsize_diana_strong(&i).unwrap();
        assert_eq!(b.value, (0.1f64 / 100.0).min(1.0 / 0.01));
        assert!(b.term("n/(160 omega L_max)").is_none());
        assert_eq!(b.terms.len(), 2);
        i.alpha = 1.0;
        assert_eq!(stepsize_dcgd_strong(&i).unwrap().value, 1.0 / 100.0);
    }

    #[test]
    fn scaling_constants_scales_gamma() {
        let i = desk();
        let g = stepsize_diana_strong(&i).unwrap().value;
        let c = 3.5;
        let mut s = i.clone();
        s.l *= c;
        s.l_max *= c;
        s.l_hat *= c;
        s.mu *= c;
        let gs = stepsize_diana_strong(&s).unwrap().value;
        assert!((gs * c - g).abs() <= 1e-15 * g);
    }

    #[test]
    fn rejects_zero_l() {
        let mut i = desk();
        i.l = 0.0;
        assert!(stepsize_diana_strong(&i).is_err());
    }

    #[test]
    fn abc_examples() {
        let mut i = desk();
        i.n = 10;
        i.l_max = 2.0;
        i.l = 2.0;
        i.l_hat = 2.0;
        i.delta_star = Some(0.0);
        let abc = abc_constants(AbcCase::FullGrad, &i).unwrap();
        assert!((abc.a - 1.8).abs() < 1e-15);
        assert_eq!((abc.b, abc.c), (1.0, 0.0));
        i.omega = 0.0;
        i.growth = Some(3.0);
        assert_eq!(abc_constants(AbcCase::StrongGrowth, &i).unwrap().b, 1.0);
        i.omega = 9.0;
        i.sigma_sq = Some(0.0);
        let h = abc_constants(AbcCase::Homogeneous, &i).unwrap();
        assert_eq!((h.a, h.b, h.c), (0.0, 9.0 / 10.0 + 1.0, 0.0));
        let p1 = abc_constants(AbcCase::FullGrad, &i).unwrap();
        let p3 = abc_constants(AbcCase::BoundedVar, &i).unwrap();
        assert_eq!((p1.a, p1.b, p1.c), (p3.a, p3.b, p3.c));
        i.sigma_sq = None;
        assert!(abc_constants(AbcCase::Homogeneous, &i).is_err());
    }

    #[test]
    fn ef21p_corollary_from_abc() {
        let i = TheoryInputs {
            alpha: 1.0,
            eps: Some(0.01),
            delta0: Some(2.0),
            ..desk()
        };
        let abc = AbcConstants {
            a: 0.0,
            b: 1.0,
            c: 0.0,
            case: AbcCase::StrongGrowth,
        };
        let s = stepsize_abc(&i, &abc).unwrap();
        assert_eq!(s.gamma.value, 1.0 / 8.0);
        assert_eq!(s.rounds, (384.0f64 * 2.0 / 0.01).ceil() as u64);
        assert_eq!(ef21p_nonconvex(&i).unwrap().rounds, s.rounds);
    }

    #[test]
    fn zero_gap_needs_no_rounds() {
        let i = TheoryInputs {
            eps: Some(0.01),
            delta0: Some(0.0),
            delta_star: Some(0.0),
            ..desk()
        };
        let abc = abc_constants(AbcCase::FullGrad, &i).unwrap();
        assert_eq!(stepsize_abc(&i, &abc).unwrap().rounds, 0);
    }

    #[test]
    fn lemma1_two_worker() {
        let q = QuadraticProblem::from_dense(
            vec![vec![vec![1.0]], vec![vec![3.0]]],
            vec![vec![0.0], vec![0.0]],
        )
        .unwrap();
        let c = q.exact_constants();
        let r = lemma1_audit(&c);
        assert!(r.all_hold);
        assert!((r.checks[0].lhs - 5f64.sqrt()).abs() < 1e-12);
        let single = SmoothnessConstants::new(2.0, vec![2.0], 2.0, 1.0, ConstantsKind::Exact);
        let r = lemma1_audit(&single);
        assert!(r.all_hold && r.checks.iter().all(|c| c.slack == 0.0));
    }

    #[test]
    fn monotone_in_every_constant() {
        let grid = [0.5, 1.0, 2.0, 4.0];
        let base = desk();
        let eval = |i: &TheoryInputs| {
            [
                stepsize_diana_strong(i).unwrap().value,
                stepsize_dcgd_strong(i).unwrap().value,
                stepsize_ef21p_strong(i).unwrap(),
            ]
        };
        type Setter = fn(&mut TheoryInputs, f64);
        let decreasing: [Setter; 4] = [
            |i, v| i.l = v,
            |i, v| i.l_max = v,
            |i, v| i.l_hat = v,
            |i, v| i.omega = v * 4.0,
        ];
        for set in decreasing {
            let mut prev = [f64::INFINITY; 3];
            for &v in &grid {
                let mut i = base.clone();
                i.mu = 0.001;
                set(&mut i, v);
                let cur = eval(&i);
                for k in 0..3 {
                    assert!(cur[k] <= prev[k]);
                }
                prev = cur;
            }
        }
        let increasing: [Setter; 2] = [|i, v| i.alpha = v / 4.0, |i, v| i.n = (v * 10.0) as usize];
        for set in increasing {
            let mut prev = [0.0; 3];
            for &v in &grid {
                let mut i = base.clone();
                set(&mut i, v);
                let cur = eval(&i);
                for k in 0..3 {
                    assert!(cur[k] >= prev[k]);
                }
                prev = cur;
            }
        }
    }
}

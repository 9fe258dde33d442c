//! Forcing-size envelopes `E₀` and the integrals built from them.
//!
//! All functions of time are also available as functions of the distance
//! `u = T* − t` to the blow-up time (`*_at` methods), which is the natural
//! variable near the singularity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{linear_fit, rms_residual};
use crate::homogeneous::HolderModulus;
use crate::quad::{integrate, integrate_to_infinity, QuadError};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum EnvelopeError {
    #[error("invalid envelope parameters: {0}")]
    InvalidParameters(String),
    #[error("{0} diverges")]
    DivergentIntegral(&'static str),
    #[error("rate hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("quadrature failed: {0}")]
    Quadrature(#[from] QuadError),
}

/// Extrapolation law for the part of a tabulated envelope beyond its data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum TailLaw {
    /// `c·u^q`
    Power {
        c: f64,
        q: f64,
    },
    /// `c·|ln u|^{−p}`
    Log {
        c: f64,
        p: f64,
    },
    Zero,
}

impl TailLaw {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            TailLaw::Power { c, q } => c * u.powf(q),
            TailLaw::Log { c, p } => c * u.ln().abs().powf(-p),
            TailLaw::Zero => 0.0,
        }
    }

    /// Value at `u = e^{−s}`.
    pub fn eval_log(&self, s: f64) -> f64 {
        match *self {
            TailLaw::Power { c, q } => c * (-q * s).exp(),
            TailLaw::Log { c, p } => c * s.abs().powf(-p),
            TailLaw::Zero => 0.0,
        }
    }

    /// `∫_0^u value(v) dv / v`, `None` when divergent.
    pub fn weighted_integral(&self, u: f64) -> Option<f64> {
        match *self {
            TailLaw::Power { c, q } if q > 0.0 => Some(c * u.powf(q) / q),
            TailLaw::Log { c, p } if p > 1.0 && u < 1.0 => {
                Some(c * u.ln().abs().powf(1.0 - p) / (p - 1.0))
            }
            TailLaw::Zero => Some(0.0),
            _ => None,
        }
    }

    /// Fits a power law and a log law to the samples `(u, value)` with the
    /// smallest `u` and keeps the better one; power wins ties within 5%.
    pub fn fit(samples: &[(f64, f64)]) -> TailLaw {
        let positive: Vec<(f64, f64)> = samples.iter().copied().filter(|s| s.1 > 0.0).collect();
        if positive.is_empty() {
            return TailLaw::Zero;
        }
        if positive.len() == 1 {
            return TailLaw::Power {
                c: positive[0].1,
                q: 0.0,
            };
        }
        let pw: Vec<(f64, f64)> = positive.iter().map(|&(u, e)| (u.ln(), e.ln())).collect();
        let (q, lc) = linear_fit(&pw);
        let power = TailLaw::Power { c: lc.exp(), q };
        if positive.iter().any(|&(u, _)| u >= 1.0) {
            return power;
        }
        let lg: Vec<(f64, f64)> = positive
            .iter()
            .map(|&(u, e)| (u.ln().abs().ln(), e.ln()))
            .collect();
        let (mp, lcl) = linear_fit(&lg);
        let log = TailLaw::Log {
            c: lcl.exp(),
            p: -mp,
        };
        if rms_residual(&lg, mp, lcl) < 0.95 * rms_residual(&pw, q, lc) {
            log
        } else {
            power
        }
    }
}

/// Shape of `E₀` as a function of `u = T* − t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum EnvelopeFamily {
    /// `M u^δ`
    Power {
        #[serde(rename = "M")]
        m: f64,
        delta: f64,
    },
    /// `M |ln u|^{−p}`, requires `u < 1`.
    Log {
        #[serde(rename = "M")]
        m: f64,
        p: f64,
    },
    Zero,
    /// Samples `(u, E₀)` with `u` ascending, interpolated log-linearly in
    /// `(ln u, ln E₀)`, continued below the data by `tail`.
    #[serde(rename = "table")]
    Tabulated {
        u: Vec<f64>,
        e0: Vec<f64>,
        tail: TailLaw,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(flatten)]
    pub family: EnvelopeFamily,
    pub tstar: f64,
    pub t0: f64,
}

const QUAD_REL: f64 = 1e-12;
/// Floor for tabulated values so that log-linear interpolation is defined.
const TABLE_FLOOR: f64 = 1e-300;

impl Envelope {
    pub fn power(m: f64, delta: f64, tstar: f64, t0: f64) -> Result<Self, EnvelopeError> {
        if !(m >= 0.0 && delta > 0.0) {
            return Err(EnvelopeError::InvalidParameters(format!(
                "power family needs M >= 0 and delta > 0, got M = {m}, delta = {delta}"
            )));
        }
        Self::anchored(EnvelopeFamily::Power { m, delta }, tstar, t0)
    }

    pub fn log(m: f64, p: f64, tstar: f64, t0: f64) -> Result<Self, EnvelopeError> {
        if !(m >= 0.0 && p > 0.0) {
            return Err(EnvelopeError::InvalidParameters(format!(
                "log family needs M >= 0 and p > 0, got M = {m}, p = {p}"
            )));
        }
        if !(tstar - t0 < 1.0) {
            return Err(EnvelopeError::InvalidParameters(
                "log family needs T* - t0 < 1".into(),
            ));
        }
        Self::anchored(EnvelopeFamily::Log { m, p }, tstar, t0)
    }

    pub fn zero(tstar: f64, t0: f64) -> Result<Self, EnvelopeError> {
        Self::anchored(EnvelopeFamily::Zero, tstar, t0)
    }

    /// Tabulated envelope from `(t, E₀(t))` samples.
    pub fn tabulated(samples: &[(f64, f64)], tstar: f64, t0: f64) -> Result<Self, EnvelopeError> {
        if samples.len() < 2 {
            return Err(EnvelopeError::InsufficientSamples {
                needed: 2,
                got: samples.len(),
            });
        }
        let mut pts: Vec<(f64, f64)> = samples.iter().map(|&(t, e)| (tstar - t, e)).collect();
        if pts
            .iter()
            .any(|&(u, e)| !(u > 0.0) || !(e >= 0.0) || !e.is_finite())
        {
            return Err(EnvelopeError::InvalidParameters(
                "table needs t < T* and finite E0 >= 0".into(),
            ));
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|a, b| a.0 == b.0);
        if pts.iter().all(|p| p.1 == 0.0) {
            return Self::zero(tstar, t0);
        }
        let tail = TailLaw::fit(&pts[..pts.len().min(8)]);
        let (u, e0) = pts.into_iter().unzip();
        Self::anchored(EnvelopeFamily::Tabulated { u, e0, tail }, tstar, t0)
    }

    fn anchored(family: EnvelopeFamily, tstar: f64, t0: f64) -> Result<Self, EnvelopeError> {
        if !(tstar > t0) || !tstar.is_finite() || !t0.is_finite() {
            return Err(EnvelopeError::InvalidParameters(format!(
                "need t0 < T*, got t0 = {t0}, T* = {tstar}"
            )));
        }
        Ok(Self { family, tstar, t0 })
    }

    /// Same family anchored at a different blow-up time.
    pub fn with_tstar(&self, tstar: f64) -> Result<Self, EnvelopeError> {
        let mut env = self.clone();
        env.tstar = tstar;
        if !(tstar > self.t0) {
            return Err(EnvelopeError::InvalidParameters("need t0 < T*".into()));
        }
        if let EnvelopeFamily::Log { .. } = env.family {
            if !(tstar - self.t0 < 1.0) {
                return Err(EnvelopeError::InvalidParameters(
                    "log family needs T* - t0 < 1".into(),
                ));
            }
        }
        Ok(env)
    }

    pub fn span(&self) -> f64 {
        self.tstar - self.t0
    }

    pub fn e0(&self, t: f64) -> f64 {
        self.e0_at(self.tstar - t)
    }

    /// `E₀` at distance `u > 0` from `T*`.
    pub fn e0_at(&self, u: f64) -> f64 {
        match &self.family {
            EnvelopeFamily::Power { m, delta } => m * u.powf(*delta),
            EnvelopeFamily::Log { m, p } => m * u.ln().abs().powf(-p),
            EnvelopeFamily::Zero => 0.0,
            EnvelopeFamily::Tabulated { u: us, e0, tail } => table_eval(us, e0, tail, u),
        }
    }

    pub fn e1(&self, t: f64) -> f64 {
        self.e1_at(self.tstar - t)
    }

    /// `E₁ = ∫_t^{T*} E₀(τ)/(T*−τ) dτ`; `+∞` when divergent.
    pub fn e1_at(&self, u: f64) -> f64 {
        match &self.family {
            EnvelopeFamily::Power { m, delta } => m * u.powf(*delta) / delta,
            EnvelopeFamily::Log { m, p } => {
                if *p > 1.0 {
                    m / ((p - 1.0) * u.ln().abs().powf(p - 1.0))
                } else {
                    f64::INFINITY
                }
            }
            EnvelopeFamily::Zero => 0.0,
            EnvelopeFamily::Tabulated { u: us, e0, tail } => {
                table_weighted_integral(us, e0, tail, u, |v| v)
            }
        }
    }

    pub fn e2(&self, t: f64) -> f64 {
        self.e2_at(self.tstar - t)
    }

    /// `E₂ = (∫_t^{T*} E₀²(τ)/(T*−τ) dτ)^{1/2}`.
    pub fn e2_at(&self, u: f64) -> f64 {
        match &self.family {
            EnvelopeFamily::Power { m, delta } => m * u.powf(*delta) / (2.0 * delta).sqrt(),
            EnvelopeFamily::Log { m, p } => {
                if 2.0 * p > 1.0 {
                    m / ((2.0 * p - 1.0).sqrt() * u.ln().abs().powf(p - 0.5))
                } else {
                    f64::INFINITY
                }
            }
            EnvelopeFamily::Zero => 0.0,
            EnvelopeFamily::Tabulated { u: us, e0, tail } => {
                let squared = match *tail {
                    TailLaw::Power { c, q } => TailLaw::Power {
                        c: c * c,
                        q: 2.0 * q,
                    },
                    TailLaw::Log { c, p } => TailLaw::Log {
                        c: c * c,
                        p: 2.0 * p,
                    },
                    TailLaw::Zero => TailLaw::Zero,
                };
                table_weighted_integral(us, e0, &squared, u, |v| v * v).sqrt()
            }
        }
    }

    pub fn e_star(&self, t: f64) -> f64 {
        self.e_star_at(self.tstar - t)
    }

    /// Mean of `E₀` over `[t, T*]`.
    pub fn e_star_at(&self, u: f64) -> f64 {
        match &self.family {
            EnvelopeFamily::Power { m, delta } => m * u.powf(*delta) / (delta + 1.0),
            EnvelopeFamily::Zero => 0.0,
            _ => match integrate(|v| self.e0_at(v), 0.0, u, QUAD_REL, 0.0) {
                Ok(r) => r.value / u,
                Err(QuadError::NotConverged { estimate, .. }) => estimate / u,
                Err(_) => f64::NAN,
            },
        }
    }

    /// `E₀` at `u = e^{−s}`, valid where `e^{−s}` underflows.
    pub fn e0_at_log(&self, s: f64) -> f64 {
        match &self.family {
            EnvelopeFamily::Power { m, delta } => m * (-delta * s).exp(),
            EnvelopeFamily::Log { m, p } => m * s.abs().powf(-p),
            EnvelopeFamily::Zero => 0.0,
            EnvelopeFamily::Tabulated { u: us, e0, tail } => {
                let u = (-s).exp();
                if u < us[0] {
                    tail.eval_log(s)
                } else {
                    table_eval(us, e0, tail, u)
                }
            }
        }
    }

    /// `E₁` by quadrature in `s = −ln(T* − τ)`, independent of closed forms.
    pub fn e1_numeric(&self, u: f64) -> Result<f64, EnvelopeError> {
        self.e1_numeric_log(-u.ln())
    }

    fn e1_numeric_log(&self, s0: f64) -> Result<f64, EnvelopeError> {
        Ok(integrate_to_infinity(|s| self.e0_at_log(s), s0, QUAD_REL, 0.0)?.value)
    }

    /// `E₂` by quadrature in `s = −ln(T* − τ)`.
    pub fn e2_numeric(&self, u: f64) -> Result<f64, EnvelopeError> {
        Ok(
            integrate_to_infinity(|s| self.e0_at_log(s).powi(2), -u.ln(), QUAD_REL, 0.0)?
                .value
                .sqrt(),
        )
    }

    /// `∫_{t0}^{T*} E₁(τ)/(T*−τ) dτ` as an iterated integral.
    pub fn z3_numeric(&self) -> Result<f64, EnvelopeError> {
        let inner_err = std::cell::Cell::new(None);
        let v = integrate_to_infinity(
            |s| match self.e1_numeric_log(s) {
                Ok(x) => x,
                Err(e) => {
                    inner_err.set(Some(e));
                    0.0
                }
            },
            -self.span().ln(),
            1e-9,
            0.0,
        )?
        .value;
        match inner_err.into_inner() {
            Some(e) => Err(e),
            None => Ok(v),
        }
    }

    /// `∫_{t0}^{T*} E₀(s)/(T*−s)·ln((T*−t0)/(T*−s)) ds`, the single-integral
    /// form of `Z₃`.
    pub fn z3_single_integral(&self) -> Result<f64, EnvelopeError> {
        let span = self.span();
        let s0 = -span.ln();
        Ok(integrate_to_infinity(|s| self.e0_at_log(s) * (s - s0), s0, 1e-12, 0.0)?.value)
    }

    pub fn integrals(&self) -> EnvelopeIntegrals {
        integrals_of(self)
    }
}

fn table_eval(us: &[f64], e0: &[f64], tail: &TailLaw, u: f64) -> f64 {
    let n = us.len();
    if u < us[0] {
        return tail.eval(u);
    }
    if u >= us[n - 1] {
        return e0[n - 1];
    }
    let k = us.partition_point(|&x| x <= u) - 1;
    let (u0, u1) = (us[k], us[k + 1]);
    let (a, b) = (e0[k].max(TABLE_FLOOR), e0[k + 1].max(TABLE_FLOOR));
    let w = (u / u0).ln() / (u1 / u0).ln();
    let v = (a.ln() * (1.0 - w) + b.ln() * w).exp();
    if v <= TABLE_FLOOR * 10.0 {
        0.0
    } else {
        v
    }
}

/// `∫_0^u φ(E₀(v)) dv/v` for a table: tail law below the data, segmentwise
/// quadrature in `s = −ln v` across it.
fn table_weighted_integral(
    us: &[f64],
    e0: &[f64],
    tail: &TailLaw,
    u: f64,
    phi: impl Fn(f64) -> f64,
) -> f64 {
    let lo = us[0];
    if u <= lo {
        return tail.weighted_integral(u).unwrap_or(f64::INFINITY);
    }
    let Some(mut total) = tail.weighted_integral(lo) else {
        return f64::INFINITY;
    };
    let f = |s: f64| phi(table_eval(us, e0, tail, (-s).exp()));
    let mut nodes: Vec<f64> = us.iter().copied().filter(|&x| x < u).collect();
    nodes.push(u);
    for w in nodes.windows(2) {
        let (a, b) = (-w[1].ln(), -w[0].ln());
        total += match integrate(f, a, b, QUAD_REL, 0.0) {
            Ok(r) => r.value,
            Err(QuadError::NotConverged { estimate, .. }) => estimate,
            Err(_) => f64::NAN,
        };
    }
    total
}

/// A nonnegative quantity that may be `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Finite(f64),
    Infinite,
}

impl Bound {
    fn from_value(v: f64) -> Self {
        if v.is_finite() {
            Bound::Finite(v)
        } else {
            Bound::Infinite
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Bound::Finite(_))
    }

    pub fn value(&self) -> f64 {
        match self {
            Bound::Finite(v) => *v,
            Bound::Infinite => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeIntegrals {
    pub envelope: Envelope,
    pub z1: Bound,
    pub z2: Bound,
    pub z3: Bound,
    /// Closed forms were used.
    pub analytic: bool,
}

impl EnvelopeIntegrals {
    pub fn e1(&self, t: f64) -> f64 {
        self.envelope.e1(t)
    }

    pub fn e2(&self, t: f64) -> f64 {
        self.envelope.e2(t)
    }

    pub fn e_star(&self, t: f64) -> f64 {
        self.envelope.e_star(t)
    }

    /// Fails with `DivergentIntegral` unless `Z₁`, `Z₂` and `Z₃` are finite.
    pub fn require_finite(&self) -> Result<(), EnvelopeError> {
        for (name, z) in [("Z1", self.z1), ("Z2", self.z2), ("Z3", self.z3)] {
            if !z.is_finite() {
                return Err(EnvelopeError::DivergentIntegral(name));
            }
        }
        Ok(())
    }
}

pub fn integrals_of(env: &Envelope) -> EnvelopeIntegrals {
    let span = env.span();
    let (z1, z2, z3, analytic) = match &env.family {
        EnvelopeFamily::Power { m, delta } => {
            let z3 = m * span.powf(*delta) / (delta * delta);
            (env.e1_at(span), env.e2_at(span).powi(2), z3, true)
        }
        EnvelopeFamily::Log { m, p } => {
            let l = span.ln().abs();
            let z3 = if *p > 2.0 {
                m / ((p - 1.0) * (p - 2.0) * l.powf(p - 2.0))
            } else {
                f64::INFINITY
            };
            (env.e1_at(span), env.e2_at(span).powi(2), z3, true)
        }
        EnvelopeFamily::Zero => (0.0, 0.0, 0.0, true),
        EnvelopeFamily::Tabulated { tail, .. } => {
            let z1 = env.e1_at(span);
            let z2 = env.e2_at(span).powi(2);
            // Z₃ is finite iff the tail of E₀ decays faster than |ln u|^{-2}
            let tail_ok = match *tail {
                TailLaw::Power { q, .. } => q > 0.0,
                TailLaw::Log { p, .. } => p > 2.0,
                TailLaw::Zero => true,
            };
            let z3 = if tail_ok && z1.is_finite() {
                env.z3_single_integral().unwrap_or(f64::INFINITY)
            } else {
                f64::INFINITY
            };
            (z1, z2, z3, false)
        }
    };
    EnvelopeIntegrals {
        envelope: env.clone(),
        z1: Bound::from_value(z1),
        z2: Bound::from_value(z2),
        z3: Bound::from_value(z3),
        analytic,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RateKind {
    /// error `~ C u^ε`
    Power { exponent: f64 },
    /// error `~ C |ln u|^{−p}`
    Log { exponent: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    #[serde(flatten)]
    pub kind: RateKind,
    pub amplitude: f64,
    pub fit_residual: f64,
}

impl RateModel {
    pub fn power(exponent: f64) -> Self {
        Self {
            kind: RateKind::Power { exponent },
            amplitude: 1.0,
            fit_residual: 0.0,
        }
    }

    pub fn log(exponent: f64) -> Self {
        Self {
            kind: RateKind::Log { exponent },
            amplitude: 1.0,
            fit_residual: 0.0,
        }
    }

    pub fn exponent(&self) -> f64 {
        match self.kind {
            RateKind::Power { exponent } | RateKind::Log { exponent } => exponent,
        }
    }

    pub fn is_power(&self) -> bool {
        matches!(self.kind, RateKind::Power { .. })
    }

    /// Model value at distance `u` from `T*`.
    pub fn eval(&self, u: f64) -> f64 {
        match self.kind {
            RateKind::Power { exponent } => self.amplitude * u.powf(exponent),
            RateKind::Log { exponent } => self.amplitude * u.ln().abs().powf(-exponent),
        }
    }

    /// The decay variable the model is linear in: `u^ε` or `|ln u|^{−p}`.
    pub fn decay_variable(&self, u: f64) -> f64 {
        match self.kind {
            RateKind::Power { exponent } => u.powf(exponent),
            RateKind::Log { exponent } => u.ln().abs().powf(-exponent),
        }
    }
}

/// Where the limiting eigenvalue sits in the spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaPosition {
    /// `A` has one distinct eigenvalue.
    Single,
    Lowest,
    Interior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum Prediction {
    Rate(RateModel),
    /// No forcing and a single eigenvalue: the rescaled solution is constant.
    Exact,
}

/// Error-decay exponent guaranteed for the given envelope.
///
/// Power family: `ε₁ = min{γδ, δ}` for a single eigenvalue, otherwise the
/// best `ε₃ = ε₂ min{1, γ}` with `ε₂ = min{(1−ε)θ₀, εδ}` over `ε ∈ (0,1)`.
/// Log family: `p* = γ(p−1) − 1`, requiring `p > 1 + 1/γ`.
pub fn predict_rate(
    env: &Envelope,
    gamma: f64,
    theta0: f64,
    position: LambdaPosition,
) -> Result<Prediction, EnvelopeError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(EnvelopeError::InvalidParameters(format!(
            "Hölder exponent must lie in (0, 1], got {gamma}"
        )));
    }
    let family = match &env.family {
        EnvelopeFamily::Tabulated { tail, .. } => match *tail {
            TailLaw::Power { c, q } if q > 0.0 => EnvelopeFamily::Power { m: c, delta: q },
            TailLaw::Power { .. } => {
                return Err(EnvelopeError::HypothesisViolated(
                    "tabulated envelope does not decay".into(),
                ))
            }
            TailLaw::Log { c, p } => EnvelopeFamily::Log { m: c, p },
            TailLaw::Zero => EnvelopeFamily::Zero,
        },
        other => other.clone(),
    };
    match family {
        EnvelopeFamily::Power { delta, .. } => Ok(Prediction::Rate(RateModel::power(power_rate(
            delta, gamma, theta0, position,
        )))),
        EnvelopeFamily::Log { p, .. } => {
            if p <= 1.0 + 1.0 / gamma {
                return Err(EnvelopeError::HypothesisViolated(format!(
                    "log envelope needs p > 1 + 1/gamma = {}, got p = {p}",
                    1.0 + 1.0 / gamma
                )));
            }
            Ok(Prediction::Rate(RateModel::log(gamma * (p - 1.0) - 1.0)))
        }
        EnvelopeFamily::Zero => match position {
            LambdaPosition::Single => Ok(Prediction::Exact),
            _ => Ok(Prediction::Rate(RateModel::power(theta0 * gamma.min(1.0)))),
        },
        EnvelopeFamily::Tabulated { .. } => unreachable!(),
    }
}

fn power_rate(delta: f64, gamma: f64, theta0: f64, position: LambdaPosition) -> f64 {
    match position {
        LambdaPosition::Single => (gamma * delta).min(delta),
        _ => {
            // min{(1−ε)θ₀, εδ} peaks where the two branches meet
            let eps = theta0 / (delta + theta0);
            let eps2 = ((1.0 - eps) * theta0).min(eps * delta);
            eps2 * gamma.min(1.0)
        }
    }
}

/// Solution-independent gap constant `c₁μ / (2α c₂ Λₙ)`.
pub fn theta0_bound(c1: f64, c2: f64, mu: f64, alpha: f64, lambda_n: f64) -> f64 {
    c1 * mu / (2.0 * alpha * c2 * lambda_n)
}

/// Sampled `ℰ₀ = ω(V₂) + V₁ + E₀` and its weighted integral `ℰ₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeEnvelope {
    pub times: Vec<f64>,
    pub e0: Vec<f64>,
    pub e1: Vec<f64>,
    pub tail: TailLaw,
    /// Finiteness of `∫ ℰ₀/(T*−τ)` from the first sample on.
    pub z1: Bound,
}

/// Builds `ℰ₀` on the samples and `ℰ₁(tᵢ) = ∫_{tᵢ}^{T*} ℰ₀/(T*−τ)` by the
/// trapezoid rule in `s = −ln(T*−τ)`, with the part beyond the last sample
/// taken from a decay law fitted to the final samples.
pub fn composite_envelope(
    env: &Envelope,
    times: &[f64],
    v1: &[f64],
    v2: &[f64],
    omega: &HolderModulus,
) -> Result<CompositeEnvelope, EnvelopeError> {
    const MIN_SAMPLES: usize = 8;
    let n = times.len();
    if n < MIN_SAMPLES {
        return Err(EnvelopeError::InsufficientSamples {
            needed: MIN_SAMPLES,
            got: n,
        });
    }
    if v1.len() != n || v2.len() != n {
        return Err(EnvelopeError::InvalidParameters(
            "series lengths differ".into(),
        ));
    }
    let u: Vec<f64> = times.iter().map(|t| env.tstar - t).collect();
    if u.iter().any(|&x| !(x > 0.0)) || u.windows(2).any(|w| w[1] >= w[0]) {
        return Err(EnvelopeError::InvalidParameters(
            "sample times must increase and stay below T*".into(),
        ));
    }
    let cal0: Vec<f64> = (0..n)
        .map(|i| omega.omega(v2[i]) + v1[i] + env.e0_at(u[i]))
        .collect();

    let tail_samples: Vec<(f64, f64)> = (n.saturating_sub(MIN_SAMPLES)..n)
        .map(|i| (u[i], cal0[i]))
        .collect();
    let tail = TailLaw::fit(&tail_samples);
    let tail_integral = match tail {
        TailLaw::Zero => Some(0.0),
        TailLaw::Power { q, .. } if q > 0.0 => Some(cal0[n - 1] / q),
        TailLaw::Log { p, .. } if p > 1.0 => Some(cal0[n - 1] * u[n - 1].ln().abs() / (p - 1.0)),
        _ => None,
    };

    let mut cal1 = vec![0.0; n];
    let mut acc = tail_integral.unwrap_or(f64::INFINITY);
    cal1[n - 1] = acc;
    for i in (0..n - 1).rev() {
        let ds = (u[i] / u[i + 1]).ln();
        acc += 0.5 * ds * (cal0[i] + cal0[i + 1]);
        cal1[i] = acc;
    }
    Ok(CompositeEnvelope {
        times: times.to_vec(),
        z1: Bound::from_value(cal1[0]),
        e0: cal0,
        e1: cal1,
        tail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn power_closed_forms() {
        let env = Envelope::power(1.0, 1.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(env.e1(0.9), 0.1, max_relative = 1e-12);
        let env = Envelope::power(1.0, 2.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(env.e2(0.9), 0.005, max_relative = 1e-12);
        assert_relative_eq!(env.e_star(0.9), 0.01 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn log_closed_form() {
        let env = Envelope::log(1.0, 3.0, 1.0, 0.5).unwrap();
        let t = 1.0 - (-10.0f64).exp();
        assert_relative_eq!(env.e1(t), 0.005, max_relative = 1e-12);
        assert!(Envelope::log(1.0, 3.0, 1.0, -0.5).is_err());
    }

    #[test]
    fn z_flags_for_log_family() {
        let z = |p| integrals_of(&Envelope::log(1.0, p, 1.0, 0.5).unwrap());
        let i = z(3.0);
        assert!(i.z1.is_finite() && i.z2.is_finite() && i.z3.is_finite());
        let i = z(1.5);
        assert!(i.z1.is_finite() && !i.z3.is_finite());
        assert!(i.require_finite().is_err());
        let i = z(0.8);
        assert!(!i.z1.is_finite() && i.z2.is_finite());
        let i = z(0.4);
        assert!(!i.z2.is_finite());
    }

    #[test]
    fn power_z3() {
        let env = Envelope::power(2.0, 0.5, 1.0, 0.0).unwrap();
        assert_relative_eq!(integrals_of(&env).z3.value(), 8.0, max_relative = 1e-12);
        assert_relative_eq!(env.z3_single_integral().unwrap(), 8.0, max_relative = 1e-8);
    }

    #[test]
    fn e_star_is_below_e1() {
        for env in [
            Envelope::power(1.0, 0.7, 1.0, 0.0).unwrap(),
            Envelope::log(1.0, 2.5, 1.0, 0.2).unwrap(),
        ] {
            for k in 1..40 {
                let u = 0.8 * 0.7f64.powi(k);
                assert!(env.e_star_at(u) <= env.e1_at(u));
            }
        }
    }

    #[test]
    fn tabulated_power_matches_analytic() {
        let exact = Envelope::power(1.5, 0.5, 1.0, 0.0).unwrap();
        let samples: Vec<(f64, f64)> = (0..60)
            .map(|k| {
                let u = 2f64.powf(-(k as f64) / 4.0);
                (1.0 - u, exact.e0_at(u))
            })
            .collect();
        let tab = Envelope::tabulated(&samples, 1.0, 0.0).unwrap();
        for u in [0.9, 0.3, 0.01, 1e-4, 1e-7] {
            assert_relative_eq!(tab.e0_at(u), exact.e0_at(u), max_relative = 1e-9);
            assert_relative_eq!(tab.e1_at(u), exact.e1_at(u), max_relative = 1e-8);
            assert_relative_eq!(tab.e2_at(u), exact.e2_at(u), max_relative = 1e-8);
        }
        let i = integrals_of(&tab);
        assert!(!i.analytic && i.z3.is_finite());
    }

    #[test]
    fn tabulated_log_tail_is_detected() {
        let exact = Envelope::log(1.0, 3.0, 1.0, 0.5).unwrap();
        let samples: Vec<(f64, f64)> = (4..80)
            .map(|k| {
                let u = 2f64.powf(-(k as f64) / 4.0);
                (1.0 - u, exact.e0_at(u))
            })
            .collect();
        let tab = Envelope::tabulated(&samples, 1.0, 0.5).unwrap();
        match &tab.family {
            EnvelopeFamily::Tabulated {
                tail: TailLaw::Log { p, .. },
                ..
            } => {
                assert_relative_eq!(*p, 3.0, max_relative = 1e-9)
            }
            other => panic!("unexpected {other:?}"),
        }
        // log-linear interpolation is not exact for this family
        let u = 1e-3;
        assert_relative_eq!(tab.e1_at(u), exact.e1_at(u), max_relative = 1e-3);
        match predict_rate(&tab, 1.0, 1.0, LambdaPosition::Single).unwrap() {
            Prediction::Rate(r) => {
                assert!(!r.is_power());
                assert_relative_eq!(r.exponent(), 1.0, max_relative = 1e-8);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn predicted_rates() {
        let log = Envelope::log(1.0, 3.0, 1.0, 0.5).unwrap();
        assert_eq!(
            predict_rate(&log, 1.0, 1.0, LambdaPosition::Single).unwrap(),
            Prediction::Rate(RateModel::log(1.0))
        );
        let pw = Envelope::power(1.0, 0.5, 1.0, 0.0).unwrap();
        assert_eq!(
            predict_rate(&pw, 1.0, 1.0, LambdaPosition::Single).unwrap(),
            Prediction::Rate(RateModel::power(0.5))
        );
        let pw = Envelope::power(1.0, 1.0, 1.0, 0.0).unwrap();
        match predict_rate(&pw, 1.0, 1.0, LambdaPosition::Interior).unwrap() {
            Prediction::Rate(r) => assert_relative_eq!(r.exponent(), 0.5, epsilon = 1e-15),
            other => panic!("{other:?}"),
        }
        let z = Envelope::zero(1.0, 0.0).unwrap();
        assert_eq!(
            predict_rate(&z, 1.0, 1.0, LambdaPosition::Single).unwrap(),
            Prediction::Exact
        );
    }

    #[test]
    fn interior_rate_is_the_maximum_over_eps() {
        let (delta, theta0, gamma) = (0.7, 0.3, 0.6);
        let best = (1..10_000)
            .map(|k| k as f64 / 10_000.0)
            .map(|e| ((1.0 - e) * theta0).min(e * delta) * gamma)
            .fold(0.0, f64::max);
        let r = power_rate(delta, gamma, theta0, LambdaPosition::Lowest);
        assert!(r >= best && r - best < 1e-4);
    }

    #[test]
    fn log_rate_hypothesis_boundary() {
        let env = |p| Envelope::log(1.0, p, 1.0, 0.5).unwrap();
        assert!(matches!(
            predict_rate(&env(3.0), 0.5, 1.0, LambdaPosition::Single),
            Err(EnvelopeError::HypothesisViolated(_))
        ));
        assert!(predict_rate(&env(3.01), 0.5, 1.0, LambdaPosition::Single).is_ok());
    }

    #[test]
    fn theta0_examples() {
        assert_eq!(theta0_bound(1.0, 1.0, 2.0, 1.0, 1.0), 1.0);
        assert_eq!(theta0_bound(1.0, 1.0, 0.0, 1.0, 1.0), 0.0);
        assert_relative_eq!(theta0_bound(1.0, 2.0, 1.0, 2.0, 3.0), 1.0 / 24.0);
    }

    fn grid(n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| 1.0 - 0.5 * 2f64.powf(-(k as f64) / 4.0))
            .collect()
    }

    #[test]
    fn composite_reduces_to_e0_without_projection_terms() {
        let env = Envelope::power(1.0, 0.5, 1.0, 0.0).unwrap();
        let t = grid(80);
        let zeros = vec![0.0; t.len()];
        let c =
            composite_envelope(&env, &t, &zeros, &zeros, &HolderModulus::power(1.0, 1.0)).unwrap();
        for (i, &ti) in t.iter().enumerate() {
            assert_relative_eq!(c.e0[i], env.e0(ti), max_relative = 1e-14);
            assert_relative_eq!(c.e1[i], env.e1(ti), max_relative = 2e-3);
        }
        assert!(c.z1.is_finite());
    }

    #[test]
    fn composite_with_holder_term_has_min_exponent() {
        let (delta, gamma) = (0.8, 0.5);
        let env = Envelope::power(1.0, delta, 1.0, 0.0).unwrap();
        let t = grid(80);
        let v: Vec<f64> = t.iter().map(|ti| (1.0 - ti).powf(delta)).collect();
        let w = HolderModulus::power(1.0, gamma);
        let c = composite_envelope(&env, &t, &v, &v, &w).unwrap();
        // trapezoid oracle at ten times the resolution on the exact ℰ₀
        let cal0 = |u: f64| u.powf(gamma * delta) + 2.0 * u.powf(delta);
        for i in [0, 20, 40, 60] {
            let (ua, ub) = (1.0 - t[i], 1e-30);
            let m = 10 * 4 * ((ua / ub).log2().ceil() as usize);
            let h = (ua / ub).ln() / m as f64;
            let oracle: f64 = (0..m)
                .map(|k| {
                    let s0 = -ua.ln() + k as f64 * h;
                    0.5 * h * (cal0((-s0).exp()) + cal0((-(s0 + h)).exp()))
                })
                .sum();
            assert_relative_eq!(c.e1[i], oracle, max_relative = 0.05);
        }
        match c.tail {
            TailLaw::Power { q, .. } => assert!((q - gamma * delta).abs() < 0.1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn composite_needs_eight_samples() {
        let env = Envelope::zero(1.0, 0.0).unwrap();
        let t = grid(5);
        let z = vec![0.0; 5];
        assert!(matches!(
            composite_envelope(&env, &t, &z, &z, &HolderModulus::power(0.0, 1.0)),
            Err(EnvelopeError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn envelope_json_uses_family_names() {
        let env = Envelope::power(1.0, 0.5, 1.0, 0.0).unwrap();
        let s = serde_json::to_string(&env).unwrap();
        assert!(s.contains("\"family\":\"power\""));
        let back: Envelope = serde_json::from_str(&s).unwrap();
        assert_eq!(back, env);
    }
}

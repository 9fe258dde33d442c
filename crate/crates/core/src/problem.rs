//! The three governed systems, blow-up thresholds and manufactured solutions.
//!
//! - general: `y' = H(y)Ay + G(t, y)`
//! - forced: `y' = H(y)Ay + f(t)`
//! - reference: `y' = a|y|^α y + f(t)`, stored as `A = aI`, `H = |x|^α`

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envelope::{Envelope, EnvelopeError};
use crate::homogeneous::{HomogeneousError, HomogeneousFn};
use crate::spectral::SpectralData;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ProblemError {
    #[error("state reached the origin at t = {0}")]
    ZeroState(f64),
    #[error("perturbation has no growth envelope; blow-up threshold unavailable")]
    UnboundedPerturbation,
    #[error("corrector vanishes at T* - t = {0}")]
    CorrectorVanishes(f64),
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Homogeneous(#[from] HomogeneousError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
}

pub type VectorField = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type TimeFunction = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// The perturbation `G(t, x)` of the general system.
///
/// `direction = None` means `G` points along `x`; otherwise along the fixed
/// unit vector given.
#[derive(Clone)]
pub enum Perturbation {
    Zero,
    /// `|G| = M|x|^{1+α−δ}`, bounded as required for `|x| ≥ r_star`.
    PowerDecay {
        m: f64,
        delta: f64,
        r_star: f64,
        direction: Option<DVector<f64>>,
    },
    /// `|G| = M|x|^{1+α} / (ln max(|x|, r_star))^p`.
    LogDecay {
        m: f64,
        p: f64,
        r_star: f64,
        direction: Option<DVector<f64>>,
    },
    /// `G = c·x`
    Linear {
        c: f64,
    },
    Custom(VectorField),
}

impl fmt::Debug for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Perturbation::Zero => write!(f, "Zero"),
            Perturbation::PowerDecay {
                m,
                delta,
                r_star,
                direction,
            } => f
                .debug_struct("PowerDecay")
                .field("m", m)
                .field("delta", delta)
                .field("r_star", r_star)
                .field("direction", direction)
                .finish(),
            Perturbation::LogDecay {
                m,
                p,
                r_star,
                direction,
            } => f
                .debug_struct("LogDecay")
                .field("m", m)
                .field("p", p)
                .field("r_star", r_star)
                .field("direction", direction)
                .finish(),
            Perturbation::Linear { c } => write!(f, "Linear {{ c: {c} }}"),
            Perturbation::Custom(_) => write!(f, "Custom(<fn>)"),
        }
    }
}

fn oriented(x: &DVector<f64>, r: f64, direction: &Option<DVector<f64>>, size: f64) -> DVector<f64> {
    match direction {
        Some(b) => b * size,
        None => x * (size / r),
    }
}

impl Perturbation {
    pub fn eval(&self, t: f64, x: &DVector<f64>, alpha: f64) -> DVector<f64> {
        match self {
            Perturbation::Zero => DVector::zeros(x.len()),
            Perturbation::PowerDecay {
                m,
                delta,
                direction,
                ..
            } => {
                let r = x.norm();
                oriented(x, r, direction, m * r.powf(1.0 + alpha - delta))
            }
            Perturbation::LogDecay {
                m,
                p,
                r_star,
                direction,
            } => {
                let r = x.norm();
                let l = r.max(*r_star).ln();
                oriented(x, r, direction, m * r.powf(1.0 + alpha) / l.powf(*p))
            }
            Perturbation::Linear { c } => x * *c,
            Perturbation::Custom(g) => g(t, x),
        }
    }

    fn validate(&self, dim: usize) -> Result<(), ProblemError> {
        let check_dir = |d: &Option<DVector<f64>>| match d {
            Some(b) if b.len() != dim || (b.norm() - 1.0).abs() > 1e-12 => {
                Err(ProblemError::Invalid(
                    "perturbation direction must be a unit vector of the system dimension".into(),
                ))
            }
            _ => Ok(()),
        };
        match self {
            Perturbation::PowerDecay {
                m,
                delta,
                r_star,
                direction,
            } => {
                if !(*m >= 0.0 && *delta > 0.0 && *r_star >= 1.0) {
                    return Err(ProblemError::Invalid(
                        "power-decay perturbation needs M >= 0, delta > 0, r* >= 1".into(),
                    ));
                }
                check_dir(direction)
            }
            Perturbation::LogDecay {
                m,
                p,
                r_star,
                direction,
            } => {
                if !(*m >= 0.0 && *p > 0.0 && *r_star > std::f64::consts::E) {
                    return Err(ProblemError::Invalid(
                        "log-decay perturbation needs M >= 0, p > 0, r* > e".into(),
                    ));
                }
                check_dir(direction)
            }
            Perturbation::Linear { c } if !c.is_finite() => Err(ProblemError::Invalid(
                "linear coefficient must be finite".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Smallest radius beyond which `sup_t |G|/|x|^{1+α} ≤ threshold`;
    /// `None` for custom perturbations.
    pub fn envelope_radius(&self, alpha: f64, threshold: f64) -> Option<f64> {
        match self {
            Perturbation::Zero => Some(0.0),
            Perturbation::Linear { c } => Some((c.abs() / threshold).powf(1.0 / alpha)),
            Perturbation::PowerDecay {
                m, delta, r_star, ..
            } => Some(r_star.max((m / threshold).powf(1.0 / delta))),
            Perturbation::LogDecay { m, p, r_star, .. } => {
                Some(r_star.max((m / threshold).powf(1.0 / p).exp()))
            }
            Perturbation::Custom(_) => None,
        }
    }

    /// Envelope bound `|G(t,x)| ≤ bound(|x|)` for `|x| ≥ r_star`.
    pub fn growth_bound(&self, r: f64, alpha: f64) -> Option<f64> {
        match self {
            Perturbation::Zero => Some(0.0),
            Perturbation::Linear { c } => Some(c.abs() * r),
            Perturbation::PowerDecay { m, delta, .. } => Some(m * r.powf(1.0 + alpha - delta)),
            Perturbation::LogDecay { m, p, .. } => Some(m * r.powf(1.0 + alpha) / r.ln().powf(*p)),
            Perturbation::Custom(_) => None,
        }
    }
}

/// The forcing `f(t)` of the forced and reference systems.
#[derive(Clone)]
pub enum Forcing {
    Zero,
    Manufactured(Arc<ManufacturedSolution>),
    Custom(TimeFunction),
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forcing::Zero => write!(f, "Zero"),
            Forcing::Manufactured(m) => write!(f, "Manufactured({:?})", m.corrector),
            Forcing::Custom(_) => write!(f, "Custom(<fn>)"),
        }
    }
}

impl Forcing {
    pub fn eval(&self, t: f64, dim: usize) -> DVector<f64> {
        match self {
            Forcing::Zero => DVector::zeros(dim),
            Forcing::Manufactured(m) => m.forcing(t),
            Forcing::Custom(f) => f(t),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Forcing::Zero)
    }
}

#[derive(Debug, Clone)]
pub enum SystemKind {
    General {
        g: Perturbation,
    },
    Forced {
        forcing: Forcing,
        envelope: Option<Envelope>,
    },
    Reference {
        a: f64,
        forcing: Forcing,
        envelope: Option<Envelope>,
    },
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub kind: SystemKind,
    pub matrix: DMatrix<f64>,
    pub h: HomogeneousFn,
    pub t0: f64,
    pub y0: DVector<f64>,
}

impl ProblemSpec {
    pub fn general(
        matrix: DMatrix<f64>,
        h: HomogeneousFn,
        g: Perturbation,
        t0: f64,
        y0: DVector<f64>,
    ) -> Result<Self, ProblemError> {
        g.validate(matrix.nrows())?;
        Self::checked(SystemKind::General { g }, matrix, h, t0, y0)
    }

    pub fn forced(
        matrix: DMatrix<f64>,
        h: HomogeneousFn,
        forcing: Forcing,
        envelope: Option<Envelope>,
        t0: f64,
        y0: DVector<f64>,
    ) -> Result<Self, ProblemError> {
        Self::checked(SystemKind::Forced { forcing, envelope }, matrix, h, t0, y0)
    }

    /// `y' = a|y|^α y + f(t)` in dimension `y0.len()`.
    pub fn reference(
        a: f64,
        alpha: f64,
        forcing: Forcing,
        envelope: Option<Envelope>,
        t0: f64,
        y0: DVector<f64>,
    ) -> Result<Self, ProblemError> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(ProblemError::Invalid(format!(
                "coefficient a must be positive, got {a}"
            )));
        }
        let n = y0.len();
        let h = HomogeneousFn::euclidean(n, alpha)?;
        let matrix = DMatrix::identity(n, n) * a;
        Self::checked(
            SystemKind::Reference {
                a,
                forcing,
                envelope,
            },
            matrix,
            h,
            t0,
            y0,
        )
    }

    fn checked(
        kind: SystemKind,
        matrix: DMatrix<f64>,
        h: HomogeneousFn,
        t0: f64,
        y0: DVector<f64>,
    ) -> Result<Self, ProblemError> {
        let n = y0.len();
        if n == 0 || matrix.shape() != (n, n) || h.dim() != n {
            return Err(ProblemError::Invalid(format!(
                "dimension mismatch: y0 has {n} entries, A is {}x{}, H acts on R^{}",
                matrix.nrows(),
                matrix.ncols(),
                h.dim()
            )));
        }
        if !t0.is_finite() || y0.iter().any(|v| !v.is_finite()) {
            return Err(ProblemError::Invalid("t0 and y0 must be finite".into()));
        }
        if y0.norm() == 0.0 {
            return Err(ProblemError::ZeroState(t0));
        }
        Ok(Self {
            kind,
            matrix,
            h,
            t0,
            y0,
        })
    }

    pub fn dim(&self) -> usize {
        self.y0.len()
    }

    pub fn alpha(&self) -> f64 {
        self.h.alpha()
    }

    /// Same system started from a different state.
    pub fn with_initial(&self, t0: f64, y0: DVector<f64>) -> Result<Self, ProblemError> {
        Self::checked(
            self.kind.clone(),
            self.matrix.clone(),
            self.h.clone(),
            t0,
            y0,
        )
    }

    pub fn envelope(&self) -> Option<&Envelope> {
        match &self.kind {
            SystemKind::Forced { envelope, .. } | SystemKind::Reference { envelope, .. } => {
                envelope.as_ref()
            }
            SystemKind::General { .. } => None,
        }
    }

    pub fn forcing(&self) -> Option<&Forcing> {
        match &self.kind {
            SystemKind::Forced { forcing, .. } | SystemKind::Reference { forcing, .. } => {
                Some(forcing)
            }
            SystemKind::General { .. } => None,
        }
    }

    /// Exact solution attached to a manufactured forcing.
    pub fn manufactured_solution(&self) -> Option<&Arc<ManufacturedSolution>> {
        match self.forcing() {
            Some(Forcing::Manufactured(m)) => Some(m),
            _ => None,
        }
    }

    /// True when the system has neither forcing nor perturbation.
    pub fn is_unforced(&self) -> bool {
        match &self.kind {
            SystemKind::General { g } => matches!(g, Perturbation::Zero),
            SystemKind::Forced { forcing, .. } | SystemKind::Reference { forcing, .. } => {
                forcing.is_zero()
            }
        }
    }

    /// Right-hand side of the governing equation.
    pub fn rhs(&self, t: f64, y: &DVector<f64>) -> Result<DVector<f64>, ProblemError> {
        let r = y.norm();
        if r == 0.0 {
            return Err(ProblemError::ZeroState(t));
        }
        let hy = r.powf(self.h.alpha()) * self.h.sphere_eval(&(y / r));
        let mut out = match &self.kind {
            SystemKind::Reference { a, .. } => y * (a * hy),
            _ => (&self.matrix * y) * hy,
        };
        match &self.kind {
            SystemKind::General { g } => out += g.eval(t, y, self.h.alpha()),
            SystemKind::Forced { forcing, .. } | SystemKind::Reference { forcing, .. } => {
                if !forcing.is_zero() {
                    out += forcing.eval(t, y.len());
                }
            }
        }
        Ok(out)
    }

    /// Largest `|f(t)| / (|y|^{1+α} E₀(t))` over the given states; values
    /// above one violate the attached envelope.
    pub fn forcing_envelope_ratio(&self, times: &[f64], states: &[DVector<f64>]) -> Option<f64> {
        let env = self.envelope()?;
        let forcing = self.forcing()?;
        let alpha = self.alpha();
        let mut worst = 0.0_f64;
        for (t, y) in times.iter().zip(states) {
            if *t >= env.tstar {
                continue;
            }
            let f = forcing.eval(*t, y.len()).norm();
            let bound = y.norm().powf(1.0 + alpha) * env.e0(*t);
            let ratio = if bound > 0.0 {
                f / bound
            } else if f == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(ratio);
        }
        Some(worst)
    }
}

/// Blow-up threshold constants for the general system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupThreshold {
    /// `a₀ = c₁Λ₁/2` (or its conjugated analogue for non-symmetric `A`).
    pub a0: f64,
    /// Radius past which the perturbation is dominated, in the coordinates
    /// the bound is applied in.
    pub r_star: f64,
    /// Initial norms `|y0| ≥ r0` are guaranteed to blow up.
    pub r0: f64,
    pub t0: f64,
    pub alpha: f64,
    pub symmetric: bool,
}

impl BlowupThreshold {
    /// Upper bound on the blow-up time from `y0`: `t0 + |y0|^{-α}/(α a₀)`,
    /// with `Sy0` in place of `y0` for non-symmetric `A`.
    pub fn tstar_upper(&self, y0: &DVector<f64>, sd: &SpectralData) -> f64 {
        let r = if self.symmetric {
            y0.norm()
        } else {
            (sd.conjugator() * y0).norm()
        };
        self.tstar_upper_norm(r)
    }

    /// Same bound in terms of the norm it is stated for.
    pub fn tstar_upper_norm(&self, r: f64) -> f64 {
        self.t0 + r.powf(-self.alpha) / (self.alpha * self.a0)
    }
}

/// Sample count for the sphere-bound estimate behind `c₁`.
pub const THRESHOLD_SAMPLES_PER_DIM: usize = 400;

/// Threshold constants for a general problem.
pub fn blowup_threshold(
    spec: &ProblemSpec,
    sd: &SpectralData,
) -> Result<BlowupThreshold, ProblemError> {
    let SystemKind::General { g } = &spec.kind else {
        return Err(ProblemError::Invalid(
            "blow-up threshold needs a general system".into(),
        ));
    };
    let alpha = spec.alpha();
    let samples = THRESHOLD_SAMPLES_PER_DIM * spec.dim();
    let lambda1 = sd.lowest();
    let floor = |r: f64| if r > 0.0 { r } else { 1.0 };
    if sd.is_symmetric() {
        let c1 = spec.h.sphere_bounds(samples)?.c1;
        let a0 = c1 * lambda1 / 2.0;
        let r_star = floor(
            g.envelope_radius(alpha, a0)
                .ok_or(ProblemError::UnboundedPerturbation)?,
        );
        Ok(BlowupThreshold {
            a0,
            r_star,
            r0: 4.0 * r_star,
            t0: spec.t0,
            alpha,
            symmetric: true,
        })
    } else {
        let c1 = spec.h.conjugated(sd).sphere_bounds(samples)?.c1;
        let a0 = c1 * lambda1 / 2.0;
        let (ns, nsi) = (sd.norm_s(), sd.norm_s_inv());
        let scale = ns * nsi.powf(1.0 + alpha);
        let rx = g
            .envelope_radius(alpha, a0 / scale)
            .ok_or(ProblemError::UnboundedPerturbation)?;
        let r_star = floor(ns * rx);
        Ok(BlowupThreshold {
            a0,
            r_star,
            // |Sy0| ≥ 4 r_star holds once |y0| ≥ ‖S⁻¹‖ · 4 r_star
            r0: nsi * 4.0 * r_star,
            t0: spec.t0,
            alpha,
            symmetric: false,
        })
    }
}

/// Deviation `φ(s)·w` of the corrector `u = ξ* + φ(s) w` from its limit,
/// in terms of `s = T* − t`.
#[derive(Clone)]
pub enum Corrector {
    /// `u ≡ ξ*`
    Constant,
    /// `φ = c s^δ`
    Power { c: f64, delta: f64, w: DVector<f64> },
    /// `φ = c |ln s|^{−q}`, needs `s < 1`.
    Log { c: f64, q: f64, w: DVector<f64> },
    /// Arbitrary smooth `u(s)`; derivatives by finite differences.
    Custom(TimeFunction),
}

impl fmt::Debug for Corrector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Corrector::Constant => write!(f, "Constant"),
            Corrector::Power { c, delta, w } => write!(
                f,
                "Power {{ c: {c}, delta: {delta}, w: {:?} }}",
                w.as_slice()
            ),
            Corrector::Log { c, q, w } => {
                write!(f, "Log {{ c: {c}, q: {q}, w: {:?} }}", w.as_slice())
            }
            Corrector::Custom(_) => write!(f, "Custom(<fn>)"),
        }
    }
}

/// Exact solution `y(t) = (T*−t)^{−1/α} u(T*−t)` and the forcing that makes
/// it solve `y' = H(y)Ay + f(t)`.
#[derive(Debug, Clone)]
pub struct ManufacturedSolution {
    pub xi: DVector<f64>,
    pub corrector: Corrector,
    pub tstar: f64,
    pub matrix: DMatrix<f64>,
    pub h: HomogeneousFn,
}

impl ManufacturedSolution {
    pub fn alpha(&self) -> f64 {
        self.h.alpha()
    }

    /// Corrector `u` at `s = T* − t`.
    pub fn u_at(&self, s: f64) -> DVector<f64> {
        match &self.corrector {
            Corrector::Constant => self.xi.clone(),
            Corrector::Power { c, delta, w } => &self.xi + w * (c * s.powf(*delta)),
            Corrector::Log { c, q, w } => &self.xi + w * (c * s.ln().abs().powf(-q)),
            Corrector::Custom(u) => u(s),
        }
    }

    /// `s·du/ds`, analytic for the built-in correctors.
    fn s_du_ds(&self, s: f64) -> Option<DVector<f64>> {
        match &self.corrector {
            Corrector::Constant => Some(DVector::zeros(self.xi.len())),
            Corrector::Power { c, delta, w } => Some(w * (c * delta * s.powf(*delta))),
            // d/ds |ln s|^{−q} = q |ln s|^{−q−1} / s for s < 1
            Corrector::Log { c, q, w } => Some(w * (c * q * s.ln().abs().powf(-q - 1.0))),
            Corrector::Custom(_) => None,
        }
    }

    pub fn y_exact(&self, t: f64) -> DVector<f64> {
        let s = self.tstar - t;
        self.u_at(s) * s.powf(-1.0 / self.alpha())
    }

    /// Rescaled exact solution `(T*−t)^{1/α} y(t)`.
    pub fn rescaled(&self, t: f64) -> DVector<f64> {
        self.u_at(self.tstar - t)
    }

    /// `f = y' − H(y)Ay`, written as `s^{−1−1/α}[u/α − s u'(s) − H(u)Au]`.
    pub fn forcing(&self, t: f64) -> DVector<f64> {
        let s = self.tstar - t;
        match self.s_du_ds(s) {
            Some(sdu) => self.bracket(s, &sdu) * s.powf(-1.0 - 1.0 / self.alpha()),
            None => self.forcing_by_differences(t),
        }
    }

    fn bracket(&self, s: f64, s_du_ds: &DVector<f64>) -> DVector<f64> {
        let u = self.u_at(s);
        let hu = self.h.evaluate(&u).unwrap_or(0.0);
        &u / self.alpha() - s_du_ds - (&self.matrix * &u) * hu
    }

    /// Five-point central difference of `y_exact` with step `(T*−t)·10⁻⁴`.
    fn forcing_by_differences(&self, t: f64) -> DVector<f64> {
        let s = self.tstar - t;
        let d = s * 1e-4;
        let dy = (self.y_exact(t - 2.0 * d) - self.y_exact(t - d) * 8.0
            + self.y_exact(t + d) * 8.0
            - self.y_exact(t + 2.0 * d))
            / (12.0 * d);
        let y = self.y_exact(t);
        let hy = self.h.evaluate(&y).unwrap_or(0.0);
        dy - (&self.matrix * &y) * hy
    }

    /// `E₀(t) = |f(t)| / |y(t)|^{1+α}`.
    pub fn implied_e0(&self, t: f64) -> f64 {
        let s = self.tstar - t;
        let u = self.u_at(s);
        let b = match self.s_du_ds(s) {
            Some(sdu) => self.bracket(s, &sdu).norm(),
            None => self.forcing(t).norm() * s.powf(1.0 + 1.0 / self.alpha()),
        };
        b / u.norm().powf(1.0 + self.alpha())
    }
}

/// Margin on tabulated `E₀` values so interpolation between nodes stays an
/// upper bound for `|f|/|y|^{1+α}`.
const TABLE_MARGIN: f64 = 1.01;
/// Samples per halving of `T* − t` when tabulating the implied envelope.
const TABLE_PER_HALVING: usize = 4;
/// Tabulation reaches down to `(T* − t0)·2^{−TABLE_HALVINGS}`.
const TABLE_HALVINGS: usize = 48;

/// Forced problem whose exact solution is `(T*−t)^{−1/α}u(t)`, together with
/// that solution. The implied envelope is tabulated and attached.
pub fn manufactured(
    xi: DVector<f64>,
    corrector: Corrector,
    tstar: f64,
    t0: f64,
    sd: &SpectralData,
    h: &HomogeneousFn,
) -> Result<(ProblemSpec, Arc<ManufacturedSolution>), ProblemError> {
    let sol = build_manufactured(xi, corrector, tstar, t0, sd.matrix().clone(), h.clone())?;
    let env = implied_envelope(&sol, t0)?;
    let y0 = sol.y_exact(t0);
    let spec = ProblemSpec::forced(
        sd.matrix().clone(),
        h.clone(),
        Forcing::Manufactured(sol.clone()),
        Some(env),
        t0,
        y0,
    )?;
    Ok((spec, sol))
}

/// Manufactured problem for the reference equation `y' = a|y|^α y + f`.
pub fn manufactured_reference(
    a: f64,
    alpha: f64,
    xi: DVector<f64>,
    corrector: Corrector,
    tstar: f64,
    t0: f64,
) -> Result<(ProblemSpec, Arc<ManufacturedSolution>), ProblemError> {
    let n = xi.len();
    let h = HomogeneousFn::euclidean(n, alpha)?;
    let sol = build_manufactured(xi, corrector, tstar, t0, DMatrix::identity(n, n) * a, h)?;
    let env = implied_envelope(&sol, t0)?;
    let y0 = sol.y_exact(t0);
    let spec = ProblemSpec::reference(
        a,
        alpha,
        Forcing::Manufactured(sol.clone()),
        Some(env),
        t0,
        y0,
    )?;
    Ok((spec, sol))
}

fn build_manufactured(
    xi: DVector<f64>,
    corrector: Corrector,
    tstar: f64,
    t0: f64,
    matrix: DMatrix<f64>,
    h: HomogeneousFn,
) -> Result<Arc<ManufacturedSolution>, ProblemError> {
    if !(tstar > t0) {
        return Err(ProblemError::Invalid("need T* > t0".into()));
    }
    if xi.len() != h.dim() || xi.norm() == 0.0 {
        return Err(ProblemError::Invalid(
            "target profile must be a nonzero vector of the system dimension".into(),
        ));
    }
    match &corrector {
        Corrector::Power { w, delta, .. } if w.len() != xi.len() || !(*delta > 0.0) => {
            return Err(ProblemError::Invalid(
                "power corrector needs delta > 0 and matching w".into(),
            ))
        }
        Corrector::Log { w, q, .. }
            if w.len() != xi.len() || !(*q > 0.0) || !(tstar - t0 < 1.0) =>
        {
            return Err(ProblemError::Invalid(
                "log corrector needs q > 0, matching w and T* - t0 < 1".into(),
            ))
        }
        _ => {}
    }
    let sol = ManufacturedSolution {
        xi,
        corrector,
        tstar,
        matrix,
        h,
    };
    let span = tstar - t0;
    let floor = 1e-12 * sol.xi.norm();
    for k in 0..=TABLE_HALVINGS * TABLE_PER_HALVING {
        let s = span * 2f64.powf(-(k as f64) / TABLE_PER_HALVING as f64);
        if sol.u_at(s).norm() <= floor {
            return Err(ProblemError::CorrectorVanishes(s));
        }
    }
    Ok(Arc::new(sol))
}

fn implied_envelope(sol: &ManufacturedSolution, t0: f64) -> Result<Envelope, ProblemError> {
    let span = sol.tstar - t0;
    let samples: Vec<(f64, f64)> = (0..=TABLE_HALVINGS * TABLE_PER_HALVING)
        .map(|k| {
            let s = span * 2f64.powf(-(k as f64) / TABLE_PER_HALVING as f64);
            let t = sol.tstar - s;
            (t, TABLE_MARGIN * sol.implied_e0(t))
        })
        .collect();
    Ok(Envelope::tabulated(&samples, sol.tstar, t0)?)
}

/// Profile `c·v` on the ray of the eigenvector `v` scaled so that
/// `αΛH(ξ) = 1`.
pub fn certified_profile(
    v: &DVector<f64>,
    lambda: f64,
    h: &HomogeneousFn,
) -> Result<DVector<f64>, ProblemError> {
    let hv = h.evaluate(v)?;
    let c = (h.alpha() * lambda * hv).powf(-1.0 / h.alpha());
    Ok(v * c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::EnvelopeFamily;
    use crate::spectral::decompose;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    fn diag(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&v(xs))
    }

    #[test]
    fn rhs_examples() {
        let p = ProblemSpec::reference(1.0, 2.0, Forcing::Zero, None, 0.0, v(&[2.0])).unwrap();
        assert_relative_eq!(p.rhs(0.0, &v(&[2.0])).unwrap()[0], 8.0);

        let h = HomogeneousFn::euclidean(2, 1.0).unwrap();
        let p = ProblemSpec::forced(
            diag(&[1.0, 3.0]),
            h,
            Forcing::Zero,
            None,
            0.0,
            v(&[1.0, 1.0]),
        )
        .unwrap();
        let r = p.rhs(0.0, &v(&[1.0, 1.0])).unwrap();
        assert_relative_eq!(r, v(&[1.0, 3.0]) * 2f64.sqrt(), epsilon = 1e-14);

        let h = HomogeneousFn::euclidean(1, 1.0).unwrap();
        let p = ProblemSpec::general(
            diag(&[1.0]),
            h,
            Perturbation::Linear { c: 1.0 },
            0.0,
            v(&[4.0]),
        )
        .unwrap();
        assert_relative_eq!(p.rhs(0.0, &v(&[4.0])).unwrap()[0], 20.0);
        assert_eq!(p.rhs(0.0, &v(&[0.0])), Err(ProblemError::ZeroState(0.0)));
    }

    fn general(a: &[f64], g: Perturbation, alpha: f64) -> (ProblemSpec, SpectralData) {
        let n = a.len();
        let h = HomogeneousFn::euclidean(n, alpha).unwrap();
        let mut y0 = DVector::zeros(n);
        y0[0] = 1.0;
        let p = ProblemSpec::general(diag(a), h, g, 0.0, y0).unwrap();
        let sd = decompose(&p.matrix, 1e-10).unwrap();
        (p, sd)
    }

    #[test]
    fn threshold_for_linear_perturbation() {
        let (p, sd) = general(&[1.0], Perturbation::Linear { c: 1.0 }, 1.0);
        let b = blowup_threshold(&p, &sd).unwrap();
        assert_relative_eq!(b.a0, 0.5);
        assert_relative_eq!(b.r_star, 2.0, max_relative = 1e-12);
        assert_relative_eq!(b.r0, 8.0, max_relative = 1e-12);
        assert_relative_eq!(b.tstar_upper(&v(&[8.0]), &sd), 0.25, max_relative = 1e-12);
    }

    #[test]
    fn threshold_for_zero_and_power_decay() {
        let (p, sd) = general(&[1.0], Perturbation::Zero, 1.0);
        let b = blowup_threshold(&p, &sd).unwrap();
        assert_eq!((b.r_star, b.r0), (1.0, 4.0));

        let g = Perturbation::PowerDecay {
            m: 1.0,
            delta: 1.0,
            r_star: 1.0,
            direction: None,
        };
        let (p, sd) = general(&[1.0], g, 1.0);
        let b = blowup_threshold(&p, &sd).unwrap();
        assert_relative_eq!(b.r_star, 1.0 / b.a0, max_relative = 1e-12);

        let custom = Perturbation::Custom(Arc::new(|_, x: &DVector<f64>| x.clone()));
        let (p, sd) = general(&[1.0], custom, 1.0);
        assert_eq!(
            blowup_threshold(&p, &sd),
            Err(ProblemError::UnboundedPerturbation)
        );
    }

    #[test]
    fn families_respect_their_envelopes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let alpha = 1.5;
        let b = v(&[0.6, 0.8, 0.0]);
        let families = [
            Perturbation::PowerDecay {
                m: 2.0,
                delta: 0.7,
                r_star: 3.0,
                direction: None,
            },
            Perturbation::PowerDecay {
                m: 0.5,
                delta: 1.3,
                r_star: 1.0,
                direction: Some(b.clone()),
            },
            Perturbation::LogDecay {
                m: 1.0,
                p: 3.0,
                r_star: 4.0,
                direction: None,
            },
            Perturbation::LogDecay {
                m: 3.0,
                p: 2.5,
                r_star: 3.0,
                direction: Some(b),
            },
        ];
        for g in &families {
            let r_star = match g {
                Perturbation::PowerDecay { r_star, .. } | Perturbation::LogDecay { r_star, .. } => {
                    *r_star
                }
                _ => unreachable!(),
            };
            for _ in 0..10_000 {
                let t: f64 = rng.gen_range(0.0..100.0);
                let dir = v(&[
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                ]);
                let r = r_star * 10f64.powf(rng.gen_range(0.0..6.0));
                let x = dir.normalize() * r;
                let size = g.eval(t, &x, alpha).norm();
                assert!(size <= g.growth_bound(x.norm(), alpha).unwrap() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn self_similar_manufactured_has_zero_forcing() {
        let sd = decompose(&diag(&[1.0, 3.0]), 1e-10).unwrap();
        let h = HomogeneousFn::euclidean(2, 1.0).unwrap();
        let xi = certified_profile(&v(&[0.0, 1.0]), 3.0, &h).unwrap();
        assert_relative_eq!(xi, v(&[0.0, 1.0 / 3.0]), epsilon = 1e-15);
        let (p, sol) = manufactured(xi, Corrector::Constant, 1.0, 0.0, &sd, &h).unwrap();
        for t in [0.0, 0.5, 0.999] {
            assert!(sol.forcing(t).norm() <= 1e-12 * sol.y_exact(t).norm().powi(2));
        }
        assert!(matches!(p.envelope().unwrap().family, EnvelopeFamily::Zero));
    }

    #[test]
    fn scalar_power_corrector_gives_power_envelope() {
        let (alpha, delta) = (2.0, 0.5);
        let xi = v(&[(2.0f64).powf(-0.5)]);
        let w = v(&[1.0]);
        let corr = Corrector::Power { c: 0.3, delta, w };
        let (p, sol) = manufactured_reference(1.0, alpha, xi, corr, 1.0, 0.0).unwrap();
        // E₀ ∝ (T*−t)^δ near T*
        let e = |u: f64| sol.implied_e0(1.0 - u);
        let slope = (e(1e-8) / e(1e-10)).ln() / 100f64.ln();
        assert_relative_eq!(slope, delta, max_relative = 1e-3);
        let ratio = p
            .forcing_envelope_ratio(
                &[0.0, 0.5, 0.9],
                &[sol.y_exact(0.0), sol.y_exact(0.5), sol.y_exact(0.9)],
            )
            .unwrap();
        assert!(ratio <= 1.0);
    }

    #[test]
    fn exact_solution_satisfies_the_equation() {
        let sd = decompose(&diag(&[1.0, 3.0]), 1e-10).unwrap();
        let h = HomogeneousFn::euclidean(2, 1.0).unwrap();
        let xi = certified_profile(&v(&[0.0, 1.0]), 3.0, &h).unwrap();
        let corr = Corrector::Power {
            c: 0.5,
            delta: 0.75,
            w: v(&[1.0, 0.0]),
        };
        let (p, sol) = manufactured(xi.clone(), corr, 1.0, 0.0, &sd, &h).unwrap();
        for t in [0.1, 0.6, 0.95] {
            let d = (1.0 - t) * 1e-4;
            let fd = (sol.y_exact(t - 2.0 * d) - sol.y_exact(t - d) * 8.0
                + sol.y_exact(t + d) * 8.0
                - sol.y_exact(t + 2.0 * d))
                / (12.0 * d);
            let r = p.rhs(t, &sol.y_exact(t)).unwrap();
            assert!((&fd - &r).norm() <= 1e-8 * r.norm());
        }
        // the custom path (finite differences) agrees with the analytic one
        let sol2 = sol.clone();
        let custom = Corrector::Custom(Arc::new(move |s| sol2.u_at(s)));
        let (_, sol_fd) = manufactured(xi, custom, 1.0, 0.0, &sd, &h).unwrap();
        for t in [0.1, 0.9, 0.999] {
            let (a, b) = (sol.forcing(t), sol_fd.forcing(t));
            assert!((&a - &b).norm() <= 1e-7 * sol.y_exact(t).norm().powi(2));
        }
    }

    #[test]
    fn log_corrector_envelope_decays_logarithmically() {
        let xi = v(&[1.0]);
        let corr = Corrector::Log {
            c: 0.5,
            q: 3.0,
            w: v(&[1.0]),
        };
        let (p, _) = manufactured_reference(1.0, 1.0, xi, corr, 0.5, 0.0).unwrap();
        match &p.envelope().unwrap().family {
            EnvelopeFamily::Tabulated {
                tail: crate::envelope::TailLaw::Log { p, .. },
                ..
            } => {
                assert!((p - 3.0).abs() < 0.3, "tail p = {p}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn vanishing_corrector_is_rejected() {
        let corr = Corrector::Power {
            c: -1.0,
            delta: 1.0,
            w: v(&[1.0]),
        };
        assert!(matches!(
            manufactured_reference(1.0, 1.0, v(&[0.5]), corr, 1.0, 0.0),
            Err(ProblemError::CorrectorVanishes(_))
        ));
    }

    #[test]
    fn nonsymmetric_threshold_uses_conjugated_kernel() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let sd = decompose(&a, 1e-10).unwrap();
        let h = HomogeneousFn::euclidean(2, 1.0).unwrap();
        let p = ProblemSpec::general(
            a,
            h.clone(),
            Perturbation::Linear { c: 0.5 },
            0.0,
            v(&[1.0, 1.0]),
        )
        .unwrap();
        let b = blowup_threshold(&p, &sd).unwrap();
        assert!(!b.symmetric);
        let c1t = h.conjugated(&sd).sphere_bounds(800).unwrap().c1;
        assert_relative_eq!(b.a0, c1t * 2.0 / 2.0, max_relative = 1e-6);
        assert!(b.r0 >= 4.0 * b.r_star);
    }
}

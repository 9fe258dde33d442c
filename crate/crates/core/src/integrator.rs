//! Adaptive Dormand–Prince 5(4) integration into a finite-time blow-up.
//!
//! Steps are limited both by the local error estimate and by a fraction of
//! the estimated time left before blow-up. A sample is stored each time
//! `|y|` passes `|y0|·2^{k/4}`, which spreads samples evenly in `ln(T*−t)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::{ProblemError, ProblemSpec, SystemKind};
use crate::spectral::SpectralData;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum IntegratorError {
    #[error("solution reached the origin before growing (t = {0})")]
    ImmediateDomainExit(f64),
    #[error("state became non-finite at t = {0}; tolerances too loose")]
    NonFiniteState(f64),
    #[error("invalid control: {0}")]
    InvalidControl(String),
    #[error("initial data is not on an eigenray of A")]
    NotOnEigenray,
    #[error("closed form needs an unforced problem")]
    NotUnforced,
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Control {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Stop once `|y|` reaches this; `None` means [`default_norm_cap`].
    pub norm_cap: Option<f64>,
    pub max_steps: usize,
    /// Fraction of the estimated time to blow-up allowed per step.
    pub kappa: f64,
    #[serde(default)]
    pub tolerance_mode: ToleranceMode,
}

/// How `rel_tol` is applied.
///
/// Blow-up solutions amplify a relative error made when `|y| = r` by about
/// `(cap/r)^α` by the time `|y|` reaches the cap, because the error shifts
/// the blow-up time. `Global` tightens each local tolerance by that factor
/// and by the step's share `h/τ̂` of the run's total `Σ h/τ̂ ≈ α ln(cap/|y0|)`,
/// so that the relative error of the samples stays near `rel_tol`. The
/// tightened tolerance is floored at [`LOCAL_TOL_FLOOR`], so this only works
/// while `rel_tol·(|y0|/cap)^α` stays well above it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceMode {
    #[default]
    Local,
    Global,
}

pub const LOCAL_TOL_FLOOR: f64 = 1e-15;

impl Default for Control {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            norm_cap: None,
            max_steps: 1_000_000,
            kappa: 0.1,
            tolerance_mode: ToleranceMode::Local,
        }
    }
}

impl Control {
    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_norm_cap(mut self, cap: f64) -> Self {
        self.norm_cap = Some(cap);
        self
    }

    pub fn with_mode(mut self, mode: ToleranceMode) -> Self {
        self.tolerance_mode = mode;
        self
    }
}

/// Growth factor `10^{12/α}`, clamped to `[10³, 10⁹]`, so that `T* − t` at
/// the cap stays about `10⁻¹²` of the initial time to blow-up.
pub fn default_norm_cap(y0_norm: f64, alpha: f64) -> f64 {
    y0_norm * 10f64.powf((12.0 / alpha).clamp(3.0, 9.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    NormCap,
    StepUnderflow,
    MaxSteps,
    LeftDomain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlowupTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub norms: Vec<f64>,
    /// `|y|^{−α}` at each sample.
    pub inv_norm_pow: Vec<f64>,
    pub alpha: f64,
    pub stop_reason: StopReason,
    pub accepted: usize,
    pub rejected: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub norm_cap: f64,
}

impl BlowupTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |y| y.len())
    }

    /// Decades of norm growth between the first and the last sample.
    pub fn growth_decades(&self) -> f64 {
        match (self.norms.first(), self.norms.last()) {
            (Some(a), Some(b)) => (b / a).log10(),
            _ => 0.0,
        }
    }

    fn push(&mut self, t: f64, y: DVector<f64>) {
        let r = y.norm();
        self.times.push(t);
        self.norms.push(r);
        self.inv_norm_pow.push(r.powf(-self.alpha));
        self.states.push(y);
    }
}

// Dormand–Prince 5(4) tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const SAMPLES_PER_DOUBLING: f64 = 4.0;
/// A solution that shrinks below this fraction of `|y0|` is treated as
/// having reached the origin.
pub const COLLAPSE_FACTOR: f64 = 1e-6;

struct StepResult {
    y_new: DVector<f64>,
    k_last: DVector<f64>,
    err: f64,
}

fn dopri_step(
    spec: &ProblemSpec,
    t: f64,
    y: &DVector<f64>,
    k1: &DVector<f64>,
    h: f64,
    ctrl: &Control,
    tighten: f64,
) -> Result<StepResult, ProblemError> {
    let k2 = spec.rhs(t + C2 * h, &(y + k1 * (h * A21)))?;
    let k3 = spec.rhs(t + C3 * h, &(y + (k1 * A31 + &k2 * A32) * h))?;
    let k4 = spec.rhs(t + C4 * h, &(y + (k1 * A41 + &k2 * A42 + &k3 * A43) * h))?;
    let k5 = spec.rhs(
        t + C5 * h,
        &(y + (k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h),
    )?;
    let k6 = spec.rhs(
        t + h,
        &(y + (k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
    )?;
    let y_new = y + (k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
    let k7 = spec.rhs(t + h, &y_new)?;
    let e = (k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
    // one scale for all components: error relative to the size of the state
    let scale = tighten * (ctrl.abs_tol + ctrl.rel_tol * y.norm().max(y_new.norm()));
    let err = (e.norm_squared() / y.len() as f64).sqrt() / scale;
    Ok(StepResult {
        y_new,
        k_last: k7,
        err,
    })
}

/// Dirichlet quotient `y·Ay/|y|²`, evaluated on `z = Sy` with the diagonal
/// form for non-symmetric `A` so that it stays within the spectrum.
pub fn dirichlet_quotient(sd: &SpectralData, y: &DVector<f64>) -> f64 {
    if sd.is_symmetric() {
        y.dot(&(sd.matrix() * y)) / y.norm_squared()
    } else {
        let z = sd.conjugator() * y;
        let num: f64 = z
            .iter()
            .zip(sd.eigenvalues())
            .map(|(zi, l)| l * zi * zi)
            .sum();
        num / z.norm_squared()
    }
}

/// Time scale `1/(α H(y) λ̂)` on which `|y|^{−α}` reaches zero.
fn time_to_blowup(spec: &ProblemSpec, sd: &SpectralData, y: &DVector<f64>) -> f64 {
    let lambda = match &spec.kind {
        SystemKind::Reference { a, .. } => *a,
        _ => dirichlet_quotient(sd, y),
    };
    let hy = spec.h.eval_nonzero(y);
    1.0 / (spec.alpha() * hy * lambda)
}

/// Integrates from the problem's own initial data.
pub fn integrate_blowup(
    spec: &ProblemSpec,
    sd: &SpectralData,
    ctrl: &Control,
) -> Result<BlowupTrajectory, IntegratorError> {
    integrate_from(spec, sd, spec.t0, &spec.y0, ctrl)
}

pub fn integrate_from(
    spec: &ProblemSpec,
    sd: &SpectralData,
    t0: f64,
    y0: &DVector<f64>,
    ctrl: &Control,
) -> Result<BlowupTrajectory, IntegratorError> {
    let r0 = y0.norm();
    if r0 == 0.0 {
        return Err(IntegratorError::ImmediateDomainExit(t0));
    }
    if !(ctrl.rel_tol > 0.0 && ctrl.abs_tol >= 0.0 && ctrl.kappa > 0.0 && ctrl.max_steps > 0) {
        return Err(IntegratorError::InvalidControl(
            "tolerances, kappa and max_steps must be positive".into(),
        ));
    }
    let alpha = spec.alpha();
    let cap = ctrl.norm_cap.unwrap_or_else(|| default_norm_cap(r0, alpha));
    if !(cap >= 1e3 * r0) {
        return Err(IntegratorError::InvalidControl(format!(
            "norm cap {cap:e} must be at least 1e3 |y0| = {:e}",
            1e3 * r0
        )));
    }
    let mut traj = BlowupTrajectory {
        times: Vec::new(),
        states: Vec::new(),
        norms: Vec::new(),
        inv_norm_pow: Vec::new(),
        alpha,
        stop_reason: StopReason::MaxSteps,
        accepted: 0,
        rejected: 0,
        rel_tol: ctrl.rel_tol,
        abs_tol: ctrl.abs_tol,
        norm_cap: cap,
    };
    traj.push(t0, y0.clone());

    let mut t = t0;
    let mut y = y0.clone();
    let mut k1 = spec.rhs(t, &y)?;
    let mut next_level = 1usize;
    let level = |k: usize| r0 * 2f64.powf(k as f64 / SAMPLES_PER_DOUBLING);
    let mut h = 0.01 * ctrl.kappa * time_to_blowup(spec, sd, &y);
    let mut err_old = 1e-4_f64;
    let mut reached = r0;

    // Σ h/τ̂ over the run is about ln of the growth of |y|^α
    let log_span = (alpha * (cap / r0).ln()).max(1.0);
    let mut steps = 0usize;
    loop {
        if steps >= ctrl.max_steps {
            traj.stop_reason = StopReason::MaxSteps;
            break;
        }
        steps += 1;
        let tau = time_to_blowup(spec, sd, &y);
        let h_cap = ctrl.kappa * tau;
        if h_cap.is_finite() && h_cap > 0.0 {
            h = h.min(h_cap);
        }
        // exactly representable step so that sample times carry no drift
        h = (t + h) - t;
        if h < 1e-14 * (t - t0 + 1.0) {
            traj.stop_reason = StopReason::StepUnderflow;
            break;
        }
        let tighten = match ctrl.tolerance_mode {
            ToleranceMode::Local => 1.0,
            ToleranceMode::Global => ((y.norm() / cap).powf(alpha) * (h / tau) / log_span)
                .max(LOCAL_TOL_FLOOR / ctrl.rel_tol)
                .min(1.0),
        };
        let step = match dopri_step(spec, t, &y, &k1, h, ctrl, tighten) {
            Ok(s) => s,
            Err(ProblemError::ZeroState(tz)) => {
                if reached <= r0 {
                    return Err(IntegratorError::ImmediateDomainExit(tz));
                }
                traj.stop_reason = StopReason::LeftDomain;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        if !step.err.is_finite() || step.y_new.iter().any(|v| !v.is_finite()) {
            // retry smaller before declaring overflow
            if h > 1e-10 * tau {
                h *= FAC_MIN;
                traj.rejected += 1;
                continue;
            }
            return Err(IntegratorError::NonFiniteState(t));
        }
        if step.err <= 1.0 {
            let err = step.err.max(1e-10);
            let fac = (SAFETY * err.powf(-(0.2 - 0.75 * BETA)) * err_old.powf(BETA))
                .clamp(FAC_MIN, FAC_MAX);
            err_old = err;
            t += h;
            y = step.y_new;
            k1 = step.k_last;
            traj.accepted += 1;
            h *= fac;

            let r = y.norm();
            reached = reached.max(r);
            if r <= COLLAPSE_FACTOR * r0 {
                if reached <= r0 {
                    return Err(IntegratorError::ImmediateDomainExit(t));
                }
                traj.stop_reason = StopReason::LeftDomain;
                break;
            }
            if r >= cap {
                traj.push(t, y.clone());
                traj.stop_reason = StopReason::NormCap;
                break;
            }
            if r >= level(next_level) {
                traj.push(t, y.clone());
                while level(next_level) <= r {
                    next_level += 1;
                }
            }
        } else {
            traj.rejected += 1;
            let fac = (SAFETY * step.err.powf(-0.2)).clamp(FAC_MIN, 1.0);
            h *= fac;
        }
    }
    if traj.times.last() != Some(&t) {
        traj.push(t, y);
    }
    Ok(traj)
}

/// Closed-form solution along an eigenray of an unforced problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactRay {
    pub t0: f64,
    pub tstar: f64,
    pub alpha: f64,
    /// `Λ·H(v0)` on the ray.
    pub a_eff: f64,
    pub direction: Vec<f64>,
}

impl ExactRay {
    pub fn norm_at(&self, t: f64) -> f64 {
        (self.alpha * self.a_eff * (self.tstar - t)).powf(-1.0 / self.alpha)
    }

    pub fn state_at(&self, t: f64) -> DVector<f64> {
        DVector::from_column_slice(&self.direction) * self.norm_at(t)
    }

    /// `|ξ*| = (α a_eff)^{−1/α}`.
    pub fn xi_norm(&self) -> f64 {
        (self.alpha * self.a_eff).powf(-1.0 / self.alpha)
    }

    pub fn xi(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.direction) * self.xi_norm()
    }
}

/// `T* = t0 + |y0|^{−α}/(α a_eff)` and the scalar profile for unforced
/// dynamics that stay on the ray of `y0`.
pub fn exact_unforced(spec: &ProblemSpec, sd: &SpectralData) -> Result<ExactRay, IntegratorError> {
    if !spec.is_unforced() {
        return Err(IntegratorError::NotUnforced);
    }
    let y0 = &spec.y0;
    let r0 = y0.norm();
    let v0 = y0 / r0;
    let lambda = match &spec.kind {
        SystemKind::Reference { a, .. } => *a,
        _ => {
            let av = sd.matrix() * &v0;
            let l = v0.dot(&av);
            let scale = sd.matrix().norm().max(1.0);
            if (&av - &v0 * l).norm() > 1e-10 * scale {
                return Err(IntegratorError::NotOnEigenray);
            }
            l
        }
    };
    let a_eff = lambda * spec.h.sphere_eval(&v0);
    let alpha = spec.alpha();
    Ok(ExactRay {
        t0: spec.t0,
        tstar: spec.t0 + r0.powf(-alpha) / (alpha * a_eff),
        alpha,
        a_eff,
        direction: v0.iter().copied().collect(),
    })
}

/// Run metadata written next to an exported trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub dim: usize,
    pub alpha: f64,
    pub samples: usize,
    pub stop_reason: StopReason,
    pub accepted: usize,
    pub rejected: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub norm_cap: f64,
}

#[derive(Error, Debug)]
pub enum ExportError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed trajectory file: {0}")]
    Malformed(String),
}

impl BlowupTrajectory {
    pub fn meta(&self) -> TrajectoryMeta {
        TrajectoryMeta {
            dim: self.dim(),
            alpha: self.alpha,
            samples: self.len(),
            stop_reason: self.stop_reason,
            accepted: self.accepted,
            rejected: self.rejected,
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            norm_cap: self.norm_cap,
        }
    }

    /// CSV with columns `t, y_1..y_n, norm, inv_norm_pow`. Floats are written
    /// in shortest round-trip form, so reading back is bit-exact.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), ExportError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("y_{i}")));
        header.push("norm".into());
        header.push("inv_norm_pow".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.times[i].to_string()];
            row.extend(self.states[i].iter().map(|v| v.to_string()));
            row.push(self.norms[i].to_string());
            row.push(self.inv_norm_pow[i].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(
        input: R,
        meta: &TrajectoryMeta,
    ) -> Result<Self, ExportError> {
        let mut r = csv::Reader::from_reader(input);
        let n = meta.dim;
        let mut traj = BlowupTrajectory {
            times: Vec::with_capacity(meta.samples),
            states: Vec::with_capacity(meta.samples),
            norms: Vec::with_capacity(meta.samples),
            inv_norm_pow: Vec::with_capacity(meta.samples),
            alpha: meta.alpha,
            stop_reason: meta.stop_reason,
            accepted: meta.accepted,
            rejected: meta.rejected,
            rel_tol: meta.rel_tol,
            abs_tol: meta.abs_tol,
            norm_cap: meta.norm_cap,
        };
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != n + 3 {
                return Err(ExportError::Malformed(format!(
                    "expected {} columns, found {}",
                    n + 3,
                    rec.len()
                )));
            }
            let vals = rec
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ExportError::Malformed(e.to_string()))?;
            traj.times.push(vals[0]);
            traj.states.push(DVector::from_column_slice(&vals[1..=n]));
            traj.norms.push(vals[n + 1]);
            traj.inv_norm_pow.push(vals[n + 2]);
        }
        if traj.len() != meta.samples {
            return Err(ExportError::Malformed(format!(
                "sidecar lists {} samples, file has {}",
                meta.samples,
                traj.len()
            )));
        }
        Ok(traj)
    }

    /// Writes `<stem>.csv` and the `<stem>.json` sidecar.
    pub fn save(&self, stem: &std::path::Path) -> Result<(), ExportError> {
        let csv_file = std::fs::File::create(stem.with_extension("csv"))?;
        self.write_csv(std::io::BufWriter::new(csv_file))?;
        let json = serde_json::to_string_pretty(&self.meta())?;
        std::fs::write(stem.with_extension("json"), json)?;
        Ok(())
    }

    pub fn load(stem: &std::path::Path) -> Result<Self, ExportError> {
        let meta: TrajectoryMeta =
            serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
        let file = std::fs::File::open(stem.with_extension("csv"))?;
        Self::read_csv(std::io::BufReader::new(file), &meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homogeneous::HomogeneousFn;
    use crate::problem::Forcing;
    use crate::spectral::decompose;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    fn reference(alpha: f64, y0: f64) -> (ProblemSpec, SpectralData) {
        let p = ProblemSpec::reference(1.0, alpha, Forcing::Zero, None, 0.0, v(&[y0])).unwrap();
        let sd = decompose(&p.matrix, 1e-10).unwrap();
        (p, sd)
    }

    #[test]
    fn scalar_closed_form() {
        let (p, sd) = reference(2.0, 1.0);
        let ctrl = Control::default()
            .with_rel_tol(1e-8)
            .with_norm_cap(1e4)
            .with_mode(ToleranceMode::Global);
        let traj = integrate_blowup(&p, &sd, &ctrl).unwrap();
        assert_eq!(traj.stop_reason, StopReason::NormCap);
        assert!(*traj.norms.last().unwrap() >= 1e4);
        let exact = exact_unforced(&p, &sd).unwrap();
        assert_relative_eq!(exact.tstar, 0.5);
        for (t, r) in traj.times.iter().zip(&traj.norms) {
            let e = (1.0 - 2.0 * t).powf(-0.5);
            assert!(
                (r - e).abs() <= 10.0 * ctrl.rel_tol * e,
                "t = {t}: {r} vs {e}"
            );
        }
        // about four samples per doubling
        let doublings = traj.growth_decades() / 2f64.log10();
        assert!((traj.len() as f64) >= 3.5 * doublings);
    }

    #[test]
    fn eigenray_stays_on_ray() {
        let h = HomogeneousFn::euclidean(2, 1.0).unwrap();
        let a = DMatrix::from_diagonal(&v(&[1.0, 3.0]));
        let p = ProblemSpec::forced(a, h, Forcing::Zero, None, 0.0, v(&[0.0, 1.0])).unwrap();
        let sd = decompose(&p.matrix, 1e-10).unwrap();
        let ctrl = Control::default()
            .with_rel_tol(1e-8)
            .with_norm_cap(1e6)
            .with_mode(ToleranceMode::Global);
        let traj = integrate_blowup(&p, &sd, &ctrl).unwrap();
        for (t, y) in traj.times.iter().zip(&traj.states) {
            assert_eq!(y[0], 0.0);
            let e = 1.0 / (1.0 - 3.0 * t);
            assert!((y[1] - e).abs() <= 10.0 * ctrl.rel_tol * e);
        }
    }

    #[test]
    fn exact_ray_examples() {
        let h = HomogeneousFn::euclidean(2, 1.0).unwrap();
        let a = DMatrix::from_diagonal(&v(&[1.0, 3.0]));
        let p = ProblemSpec::forced(
            a.clone(),
            h.clone(),
            Forcing::Zero,
            None,
            0.0,
            v(&[0.0, 2.0]),
        )
        .unwrap();
        let sd = decompose(&a, 1e-10).unwrap();
        let e = exact_unforced(&p, &sd).unwrap();
        assert_relative_eq!(e.a_eff, 3.0);
        assert_relative_eq!(e.tstar, 1.0 / 6.0);
        assert_relative_eq!(e.xi_norm(), 1.0 / 3.0);
        let off = p.with_initial(0.0, v(&[1.0, 1.0])).unwrap();
        assert_eq!(
            exact_unforced(&off, &sd),
            Err(IntegratorError::NotOnEigenray)
        );
    }

    #[test]
    fn step_underflow_is_reported_for_huge_caps() {
        let (p, sd) = reference(2.0, 1.0);
        let traj = integrate_blowup(&p, &sd, &Control::default().with_norm_cap(1e12)).unwrap();
        assert_eq!(traj.stop_reason, StopReason::StepUnderflow);
        assert!(traj.growth_decades() >= 3.0);
    }

    #[test]
    fn default_cap_is_reachable() {
        for alpha in [0.5, 1.0, 2.0, 3.0] {
            let (p, sd) = reference(alpha, 1.0);
            let traj = integrate_blowup(&p, &sd, &Control::default()).unwrap();
            assert_eq!(traj.stop_reason, StopReason::NormCap, "alpha = {alpha}");
            assert_relative_eq!(traj.norm_cap, default_norm_cap(1.0, alpha));
        }
        assert_eq!(default_norm_cap(2.0, 1.0), 2e9);
        assert_eq!(default_norm_cap(1.0, 2.0), 1e6);
        assert_eq!(default_norm_cap(1.0, 6.0), 1e3);
    }

    #[test]
    fn max_steps_and_bad_control() {
        let (p, sd) = reference(1.0, 1.0);
        let ctrl = Control {
            max_steps: 10,
            ..Control::default()
        };
        let traj = integrate_blowup(&p, &sd, &ctrl).unwrap();
        assert_eq!(traj.stop_reason, StopReason::MaxSteps);
        let bad = Control::default().with_norm_cap(10.0);
        assert!(matches!(
            integrate_blowup(&p, &sd, &bad),
            Err(IntegratorError::InvalidControl(_))
        ));
    }

    #[test]
    fn collapse_to_origin_is_an_immediate_exit() {
        let h = HomogeneousFn::euclidean(1, 1.0).unwrap();
        let g = crate::problem::Perturbation::Linear { c: -100.0 };
        let p = ProblemSpec::general(DMatrix::identity(1, 1), h, g, 0.0, v(&[0.1])).unwrap();
        let sd = decompose(&p.matrix, 1e-10).unwrap();
        let r = integrate_blowup(&p, &sd, &Control::default());
        assert!(
            matches!(r, Err(IntegratorError::ImmediateDomainExit(_))),
            "{r:?}"
        );
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let (p, sd) = reference(1.0, 0.7);
        let traj = integrate_blowup(&p, &sd, &Control::default().with_norm_cap(1e4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("run");
        traj.save(&stem).unwrap();
        let back = BlowupTrajectory::load(&stem).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn dirichlet_quotient_examples() {
        let sd = decompose(&DMatrix::from_diagonal(&v(&[1.0, 3.0])), 1e-10).unwrap();
        assert_relative_eq!(dirichlet_quotient(&sd, &v(&[1.0, 1.0])), 2.0);
        assert_relative_eq!(dirichlet_quotient(&sd, &v(&[0.0, 1.0])), 3.0);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let sd = decompose(&a, 1e-10).unwrap();
        let y = sd.from_conjugate(&v(&[1.0, 0.0])).unwrap();
        assert_relative_eq!(dirichlet_quotient(&sd, &y), 2.0, epsilon = 1e-14);
    }
}

//! Post-processing of blow-up trajectories.
//!
//! The chain is: blow-up time `T̂*` from the affine tail of `|y|^{−α}`,
//! limiting eigenvalue `Λ` from the Dirichlet quotient, profile `ξ*` from
//! the rescaled solution `w = (T̂*−t)^{1/α} y`, the eigen-certificate, and a
//! power-or-log fit of `|w − ξ*|`.

use std::fmt;
use std::ops::Range;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envelope::{
    composite_envelope, integrals_of, predict_rate, theta0_bound, Envelope, EnvelopeError,
    EnvelopeFamily, LambdaPosition, Prediction, RateKind, RateModel, TailLaw,
};
use crate::fit::{linear_fit, median, rms_residual, weighted_linear_fit};
use crate::homogeneous::{HolderModulus, HomogeneousError, HomogeneousFn};
use crate::integrator::{dirichlet_quotient, BlowupTrajectory, StopReason};
use crate::problem::{Perturbation, ProblemSpec, SystemKind};
use crate::spectral::{SpectralData, SpectralError};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum AsymptoticsError {
    #[error("only {decades:.2} decades of norm growth; need {needed}")]
    InsufficientGrowth { decades: f64, needed: f64 },
    #[error("|y|^-alpha is not affine near the end: sub-window roots spread by {spread:e} (limit {limit:e})")]
    NonAffineTail { spread: f64, limit: f64 },
    #[error("fitted blow-up time {tstar} does not lie after the last sample {last}")]
    RootBeforeLastSample { tstar: f64, last: f64 },
    #[error("Dirichlet quotient settles at {median}, farther than mu/4 from the nearest eigenvalue {nearest}")]
    AmbiguousLimit { median: f64, nearest: f64 },
    #[error("analysis window holds {got} samples; need {needed}")]
    WindowTooShort { got: usize, needed: usize },
    #[error("all errors are at the noise floor; convergence too fast to classify")]
    AllErrorsAtNoiseFloor,
    #[error("trajectory stopped with {0:?}; not a blow-up run")]
    NotBlowup(StopReason),
    #[error("direction at the last sample is {deviation:e} from v*, above {limit:e}; not yet asymptotic")]
    NotConverged { deviation: f64, limit: f64 },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Homogeneous(#[from] HomogeneousError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
}

/// Minimum norm growth, in decades, for `T*` estimation.
pub const MIN_GROWTH_DECADES: f64 = 3.0;
/// The analysis window spans `|y| ∈ [10^{-2}, 10^{-1/2}]·|y|_last`.
pub const WINDOW_DECADES: (f64, f64) = (2.0, 0.5);
pub const MIN_WINDOW: usize = 8;
/// A report is accepted only if the last sample's direction is within this
/// of `v*`.
pub const LIMIT_DEVIATION: f64 = 1e-3;
const NONAFFINE_LIMIT: f64 = 1e-3;
/// A log model replaces the power model only if its rms residual is below
/// this fraction of the power model's.
pub const POWER_PREFERENCE: f64 = 0.95;

/// Indices of the samples with `|y|` in the analysis window.
pub fn analysis_window(norms: &[f64]) -> Range<usize> {
    analysis_window_with(norms, WINDOW_DECADES)
}

/// Samples with `|y| ∈ [10^{-decades.0}, 10^{-decades.1}]·|y|_last`.
pub fn analysis_window_with(norms: &[f64], decades: (f64, f64)) -> Range<usize> {
    let Some(&last) = norms.last() else {
        return 0..0;
    };
    let lo = last * 10f64.powf(-decades.0);
    let hi = last * 10f64.powf(-decades.1);
    let start = norms.iter().position(|&r| r >= lo).unwrap_or(norms.len());
    let end = norms
        .iter()
        .rposition(|&r| r <= hi)
        .map_or(start, |i| i + 1);
    start..end.max(start)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TstarEstimate {
    pub value: f64,
    pub uncertainty: f64,
    pub window_start: usize,
    pub window_end: usize,
}

impl TstarEstimate {
    pub fn window(&self) -> Range<usize> {
        self.window_start..self.window_end
    }
}

fn affine_root(times: &[f64], q: &[f64]) -> f64 {
    let t_ref = times[0];
    let pts: Vec<(f64, f64)> = times.iter().zip(q).map(|(t, q)| (t - t_ref, *q)).collect();
    // relative residuals: the points nearest T* carry the most weight
    let w: Vec<f64> = q.iter().map(|q| q.powi(-2)).collect();
    let (slope, intercept) = weighted_linear_fit(&pts, &w);
    t_ref - intercept / slope
}

/// Root of the weighted affine fit of `|y|^{−α}` against `t` over the
/// analysis window; the uncertainty is the spread of the roots fitted on the
/// trailing 1, 2/3 and 1/3 of the window (in `ln|y|`).
pub fn estimate_tstar(traj: &BlowupTrajectory, t0: f64) -> Result<TstarEstimate, AsymptoticsError> {
    estimate_tstar_with(traj, t0, WINDOW_DECADES)
}

pub fn estimate_tstar_with(
    traj: &BlowupTrajectory,
    t0: f64,
    window_decades: (f64, f64),
) -> Result<TstarEstimate, AsymptoticsError> {
    let decades = traj.growth_decades();
    if !(decades >= MIN_GROWTH_DECADES) {
        return Err(AsymptoticsError::InsufficientGrowth {
            decades,
            needed: MIN_GROWTH_DECADES,
        });
    }
    let win = analysis_window_with(&traj.norms, window_decades);
    if win.len() < MIN_WINDOW {
        return Err(AsymptoticsError::WindowTooShort {
            got: win.len(),
            needed: MIN_WINDOW,
        });
    }
    let ln_end = traj.norms[win.end - 1].ln();
    let ln_start = traj.norms[win.start].ln();
    let mut roots = Vec::with_capacity(3);
    for frac in [1.0, 2.0 / 3.0, 1.0 / 3.0] {
        let cut = ln_end - frac * (ln_end - ln_start);
        let idx: Vec<usize> = win
            .clone()
            .filter(|&i| traj.norms[i].ln() >= cut - 1e-12)
            .collect();
        if idx.len() < 3 {
            continue;
        }
        let ts: Vec<f64> = idx.iter().map(|&i| traj.times[i]).collect();
        let qs: Vec<f64> = idx.iter().map(|&i| traj.inv_norm_pow[i]).collect();
        roots.push(affine_root(&ts, &qs));
    }
    let value = roots[0];
    let last = *traj.times.last().unwrap();
    if !(value > last) {
        return Err(AsymptoticsError::RootBeforeLastSample { tstar: value, last });
    }
    let lo = roots.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = roots.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = hi - lo;
    let limit = NONAFFINE_LIMIT * (value - t0);
    if spread > limit {
        return Err(AsymptoticsError::NonAffineTail { spread, limit });
    }
    Ok(TstarEstimate {
        value,
        uncertainty: spread,
        window_start: win.start,
        window_end: win.end,
    })
}

/// Residual of the best decay-law extrapolation of `w` with blow-up time `tstar`.
fn extrapolation_residual(traj: &BlowupTrajectory, window: &Range<usize>, tstar: f64) -> f64 {
    let us: Vec<f64> = window.clone().map(|i| tstar - traj.times[i]).collect();
    let ws: Vec<DVector<f64>> = window.clone().map(|i| rescaled(traj, tstar, i)).collect();
    best_decay_model(&us, &ws, POWER_PREFERENCE).map_or(f64::INFINITY, |m| m.fit_residual)
}

/// Moves `T̂*` to where the rescaled solution is best explained by a decay
/// law, searching within half the distance from the last sample to `T̂*`.
/// The shift is reported as the uncertainty. Returns `None` when the
/// residual does not improve by at least half.
pub fn refine_tstar(traj: &BlowupTrajectory, est: &TstarEstimate) -> Option<TstarEstimate> {
    let window = est.window();
    let last = *traj.times.last()?;
    let half = 0.5 * (est.value - last);
    if !(half > 0.0) {
        return None;
    }
    let f = |t: f64| extrapolation_residual(traj, &window, t);
    let base = f(est.value);
    const GRID: usize = 41;
    let grid: Vec<f64> = (0..GRID)
        .map(|k| est.value - half + 2.0 * half * k as f64 / (GRID - 1) as f64)
        .collect();
    let vals: Vec<f64> = grid.iter().map(|&t| f(t)).collect();
    let k = (0..GRID).min_by(|&i, &j| vals[i].total_cmp(&vals[j]))?;
    let (mut a, mut b) = (grid[k.saturating_sub(1)], grid[(k + 1).min(GRID - 1)]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let value = 0.5 * (a + b);
    if !(f(value) <= 0.5 * base) {
        return None;
    }
    Some(TstarEstimate {
        value,
        uncertainty: (value - est.value).abs(),
        ..*est
    })
}

/// `λ(tᵢ) = y·Ay/|y|²`, on `z = Sy` for non-symmetric `A`.
pub fn dirichlet_series(traj: &BlowupTrajectory, sd: &SpectralData) -> Vec<f64> {
    traj.states
        .iter()
        .map(|y| dirichlet_quotient(sd, y))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaIdentification {
    pub lambda: f64,
    /// Gap to the other distinct eigenvalues; `None` when `A` has only one.
    pub mu: Option<f64>,
    pub position: LambdaPosition,
    pub tail_median: f64,
}

/// Snaps the median of the last-decade quotients to the spectrum.
pub fn identify_lambda(
    lambdas: &[f64],
    norms: &[f64],
    sd: &SpectralData,
) -> Result<LambdaIdentification, AsymptoticsError> {
    let last = norms.last().copied().unwrap_or(0.0);
    let tail: Vec<f64> = lambdas
        .iter()
        .zip(norms)
        .filter(|(_, &r)| r >= last / 10.0)
        .map(|(l, _)| *l)
        .collect();
    let med = median(&tail);
    let distinct = sd.distinct_eigenvalues();
    let lambda = distinct
        .iter()
        .copied()
        .min_by(|a, b| (a - med).abs().total_cmp(&(b - med).abs()))
        .ok_or(AsymptoticsError::AmbiguousLimit {
            median: med,
            nearest: f64::NAN,
        })?;
    let mu = sd.gap(lambda)?;
    if let Some(mu) = mu {
        if (med - lambda).abs() > mu / 4.0 {
            return Err(AsymptoticsError::AmbiguousLimit {
                median: med,
                nearest: lambda,
            });
        }
    }
    let position = if distinct.len() == 1 {
        LambdaPosition::Single
    } else if lambda == distinct[0] {
        LambdaPosition::Lowest
    } else {
        LambdaPosition::Interior
    };
    Ok(LambdaIdentification {
        lambda,
        mu,
        position,
        tail_median: med,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub selected: RateModel,
    pub power: RateModel,
    pub log: Option<RateModel>,
    pub samples: usize,
}

/// Fits `C u^ε` and `C |ln u|^{−p}` to `(tᵢ, errᵢ)` with `u = T̂* − t`, and
/// keeps the log model only when its rms residual beats the power model's
/// by more than 5%. Errors at or below `noise_floor` are ignored.
pub fn fit_rate(
    times: &[f64],
    errors: &[f64],
    tstar: f64,
    noise_floor: f64,
) -> Result<RateFit, AsymptoticsError> {
    fit_rate_with(times, errors, tstar, noise_floor, POWER_PREFERENCE)
}

/// [`fit_rate`] with an explicit preference margin for the power model.
pub fn fit_rate_with(
    times: &[f64],
    errors: &[f64],
    tstar: f64,
    noise_floor: f64,
    power_preference: f64,
) -> Result<RateFit, AsymptoticsError> {
    let max = errors.iter().copied().fold(0.0_f64, f64::max);
    let floor = noise_floor.max(1e-12 * max);
    let data: Vec<(f64, f64)> = times
        .iter()
        .zip(errors)
        .filter(|(t, e)| **e > floor && tstar - **t > 0.0)
        .map(|(t, e)| (tstar - t, *e))
        .collect();
    if data.len() < MIN_WINDOW {
        return Err(AsymptoticsError::AllErrorsAtNoiseFloor);
    }
    let pw: Vec<(f64, f64)> = data.iter().map(|(u, e)| (u.ln(), e.ln())).collect();
    let (slope, icpt) = linear_fit(&pw);
    let power = RateModel {
        kind: RateKind::Power { exponent: slope },
        amplitude: icpt.exp(),
        fit_residual: rms_residual(&pw, slope, icpt),
    };
    let log = if data.iter().all(|(u, _)| *u < 1.0) {
        let lg: Vec<(f64, f64)> = data
            .iter()
            .map(|(u, e)| (u.ln().abs().ln(), e.ln()))
            .collect();
        let (slope, icpt) = linear_fit(&lg);
        Some(RateModel {
            kind: RateKind::Log { exponent: -slope },
            amplitude: icpt.exp(),
            fit_residual: rms_residual(&lg, slope, icpt),
        })
    } else {
        None
    };
    let selected = match log {
        Some(l) if l.fit_residual < power_preference * power.fit_residual => l,
        _ => power,
    };
    Ok(RateFit {
        selected,
        power,
        log,
        samples: data.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// `V₁(tᵢ)` at every sample (on `Sy` for non-symmetric `A`).
    pub v1: Vec<f64>,
    /// `V₂(tᵢ) = |v(tᵢ) − v*|` at every sample.
    pub v2: Vec<f64>,
    pub xi_star: Vec<f64>,
    pub v_star: Vec<f64>,
    /// `|w(tᵢ) − ξ*|` over the window.
    pub errors: Vec<f64>,
    /// Rate fit of `errors`, when they are above the noise floor.
    pub rate: Option<RateFit>,
}

fn rescaled(traj: &BlowupTrajectory, tstar: f64, i: usize) -> DVector<f64> {
    &traj.states[i] * (tstar - traj.times[i]).powf(1.0 / traj.alpha)
}

/// Least-squares intercept of `w` against the decay variable `φ`, and the
/// residual sum of squares over all components.
fn extrapolate(ws: &[DVector<f64>], phi: &[f64]) -> (DVector<f64>, f64) {
    let n = ws[0].len();
    let mut rss = 0.0;
    let xi = DVector::from_fn(n, |k, _| {
        let pts: Vec<(f64, f64)> = phi.iter().zip(ws).map(|(p, w)| (*p, w[k])).collect();
        let (slope, icpt) = linear_fit(&pts);
        rss += pts
            .iter()
            .map(|(x, y)| (y - slope * x - icpt).powi(2))
            .sum::<f64>();
        icpt
    });
    (xi, rss)
}

const DECAY_GRID: usize = 80;

/// Decay variable under which `w` is closest to affine, searched over
/// `u^ε` and `|ln u|^{−p}`, refined by golden section around the best grid
/// point.
fn best_decay_model(us: &[f64], ws: &[DVector<f64>], power_preference: f64) -> Option<RateModel> {
    let rss_of = |m: &RateModel| {
        let phi: Vec<f64> = us.iter().map(|u| m.decay_variable(*u)).collect();
        extrapolate(ws, &phi).1
    };
    let search = |make: &dyn Fn(f64) -> RateModel, lo: f64, hi: f64| -> (RateModel, f64) {
        let grid: Vec<f64> = (0..DECAY_GRID)
            .map(|k| lo * (hi / lo).powf(k as f64 / (DECAY_GRID - 1) as f64))
            .collect();
        let vals: Vec<f64> = grid.iter().map(|&e| rss_of(&make(e))).collect();
        let k = (0..DECAY_GRID)
            .min_by(|&i, &j| vals[i].total_cmp(&vals[j]))
            .unwrap();
        let (mut a, mut b) = (
            grid[k.saturating_sub(1)].ln(),
            grid[(k + 1).min(DECAY_GRID - 1)].ln(),
        );
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let f = |x: f64| rss_of(&make(x.exp()));
        let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..40 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = f(d);
            }
        }
        let e = (0.5 * (a + b)).exp();
        let m = make(e);
        let rss = rss_of(&m);
        (m, rss)
    };
    let (power, rss_p) = search(&RateModel::power, 0.02, 4.0);
    let npts = us.len() as f64;
    let mut best = RateModel {
        fit_residual: (rss_p / npts).sqrt(),
        ..power
    };
    if us.iter().all(|u| *u < 1.0) {
        let (log, rss_l) = search(&RateModel::log, 0.1, 8.0);
        let rms_l = (rss_l / npts).sqrt();
        if rms_l < power_preference * best.fit_residual {
            best = RateModel {
                fit_residual: rms_l,
                ..log
            };
        }
    }
    best.fit_residual.is_finite().then_some(best)
}

/// `V₁`, `V₂`, `ξ*` and `v*`.
///
/// `ξ*` is the intercept of `w` against the decay variable (`u^ε` or
/// `|ln u|^{−p}`) under which `w` is most nearly affine. The rate law of
/// `|w − ξ*|` is then fitted and the extrapolation repeated once with its
/// decay variable. A window where `w` does not move beyond the noise floor
/// gives the window mean.
pub fn projection_diagnostics(
    traj: &BlowupTrajectory,
    sd: &SpectralData,
    lambda: f64,
    tstar: f64,
    window: Range<usize>,
    noise_floor: f64,
    power_preference: f64,
) -> Result<Projection, AsymptoticsError> {
    if window.len() < MIN_WINDOW {
        return Err(AsymptoticsError::WindowTooShort {
            got: window.len(),
            needed: MIN_WINDOW,
        });
    }
    let v1 = if sd.is_symmetric() {
        let r = sd.projection(lambda)?;
        traj.states
            .iter()
            .map(|y| {
                let v = y / y.norm();
                (&v - r * &v).norm()
            })
            .collect()
    } else {
        let r = sd.diagonal_projection(lambda)?;
        traj.states
            .iter()
            .map(|y| {
                let z = sd.conjugator() * y;
                let v = &z / z.norm();
                (&v - &r * &v).norm()
            })
            .collect()
    };

    let times: Vec<f64> = window.clone().map(|i| traj.times[i]).collect();
    let ws: Vec<DVector<f64>> = window.clone().map(|i| rescaled(traj, tstar, i)).collect();
    let us: Vec<f64> = times.iter().map(|t| tstar - t).collect();
    let mean = ws.iter().fold(DVector::zeros(ws[0].len()), |a, w| a + w) / ws.len() as f64;
    let spread = ws.iter().map(|w| (w - &mean).norm()).fold(0.0, f64::max);
    let mut xi = mean.clone();
    let mut rate = None;
    if spread > noise_floor * mean.norm() {
        if let Some(model) = best_decay_model(&us, &ws, power_preference) {
            let phi: Vec<f64> = us.iter().map(|u| model.decay_variable(*u)).collect();
            xi = extrapolate(&ws, &phi).0;
            let errs: Vec<f64> = ws.iter().map(|w| (w - &xi).norm()).collect();
            if let Ok(fit) = fit_rate_with(
                &times,
                &errs,
                tstar,
                noise_floor * xi.norm(),
                power_preference,
            ) {
                if fit.selected.exponent() > 0.0 {
                    let phi: Vec<f64> =
                        us.iter().map(|u| fit.selected.decay_variable(*u)).collect();
                    xi = extrapolate(&ws, &phi).0;
                    rate = Some(fit);
                }
            }
        }
    }
    let errors: Vec<f64> = ws.iter().map(|w| (w - &xi).norm()).collect();
    if rate.is_some() {
        rate = fit_rate_with(
            &times,
            &errors,
            tstar,
            noise_floor * xi.norm(),
            power_preference,
        )
        .ok();
    }
    let v_star = &xi / xi.norm();
    let v2 = traj
        .states
        .iter()
        .map(|y| (y / y.norm() - &v_star).norm())
        .collect();
    Ok(Projection {
        v1,
        v2,
        xi_star: xi.iter().copied().collect(),
        v_star: v_star.iter().copied().collect(),
        errors,
        rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// `|Aξ* − Λξ*| / |ξ*|`
    pub eigen_residual: f64,
    /// `|αΛH(ξ*) − 1|`
    pub h_residual: f64,
}

pub fn verify_certificate(
    xi: &DVector<f64>,
    lambda: f64,
    sd: &SpectralData,
    h: &HomogeneousFn,
) -> Result<Certificate, AsymptoticsError> {
    let hx = h.evaluate(xi)?;
    Ok(Certificate {
        eigen_residual: (sd.matrix() * xi - xi * lambda).norm() / xi.norm(),
        h_residual: (h.alpha() * lambda * hx - 1.0).abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HypothesisStatus {
    Satisfied,
    Violated,
    Unknown,
}

impl HypothesisStatus {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Self::Satisfied
        } else {
            Self::Violated
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hypotheses {
    pub z1_finite: HypothesisStatus,
    pub z2_finite: HypothesisStatus,
    pub z3_finite: HypothesisStatus,
    /// Finiteness of the composite `𝒵₁`.
    pub composite_z1_finite: HypothesisStatus,
    /// `p > 1 + 1/γ` for log envelopes.
    pub log_exponent: HypothesisStatus,
}

impl Default for Hypotheses {
    fn default() -> Self {
        Self {
            z1_finite: HypothesisStatus::Unknown,
            z2_finite: HypothesisStatus::Unknown,
            z3_finite: HypothesisStatus::Unknown,
            composite_z1_finite: HypothesisStatus::Unknown,
            log_exponent: HypothesisStatus::Unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PredictedRate {
    Predicted { prediction: Prediction },
    HypothesisViolated { reason: String },
    Unavailable { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisOptions {
    /// Errors below `noise_floor·|ξ*|` are not fitted.
    pub noise_floor: f64,
    /// Chord radius of the Hölder probe at `v*`.
    pub holder_radius: f64,
    pub holder_samples: usize,
    pub bounds_samples_per_dim: usize,
    /// Analysis window `|y| ∈ [10^{-a}, 10^{-b}]·|y|_last` as `(a, b)`.
    pub window_decades: (f64, f64),
    /// See [`POWER_PREFERENCE`].
    pub power_preference: f64,
}

impl AnalysisOptions {
    /// Noise floor scaled from the integration tolerance.
    pub fn for_tolerance(rel_tol: f64) -> Self {
        Self {
            noise_floor: (1e3 * rel_tol).max(1e-12),
            ..Self::default()
        }
    }
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            noise_floor: 1e-7,
            holder_radius: 0.1,
            holder_samples: 64,
            bounds_samples_per_dim: 200,
            window_decades: WINDOW_DECADES,
            power_preference: POWER_PREFERENCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Tstar,
    Lambda,
    Projection,
    Certificate,
    Rate,
    Prediction,
    Done,
}

/// Outcome of [`analyze`]. Fields after a failed stage are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub accepted: bool,
    /// First stage that failed, or `Done`.
    pub stage: Stage,
    pub failure: Option<String>,
    pub stop_reason: StopReason,
    pub growth_decades: f64,
    #[serde(rename = "Tstar_hat")]
    pub tstar_hat: Option<f64>,
    #[serde(rename = "Tstar_uncertainty")]
    pub tstar_uncertainty: Option<f64>,
    pub window: Option<(usize, usize)>,
    #[serde(rename = "Lambda_hat")]
    pub lambda_hat: Option<f64>,
    pub mu: Option<f64>,
    pub lambda_position: Option<LambdaPosition>,
    pub v_star: Option<Vec<f64>>,
    pub xi_star: Option<Vec<f64>>,
    pub cert_eigen_residual: Option<f64>,
    #[serde(rename = "cert_H_residual")]
    pub cert_h_residual: Option<f64>,
    /// `|v* − y/|y||` at the last sample.
    pub limit_deviation: Option<f64>,
    /// `(T̂*−t)^{1/α}|y(t)| / |ξ*|` over the window: min and max.
    pub band: Option<(f64, f64)>,
    pub times: Vec<f64>,
    pub lambda_series: Vec<f64>,
    #[serde(rename = "V1_series")]
    pub v1_series: Vec<f64>,
    #[serde(rename = "V2_series")]
    pub v2_series: Vec<f64>,
    /// `|w(tᵢ) − ξ*|` over the window.
    pub error_series: Vec<f64>,
    pub fitted_rate: Option<RateFit>,
    /// Exponents fitted with `T̂*` moved by `±` its uncertainty.
    pub fitted_exponent_range: Option<(f64, f64)>,
    pub predicted_rate: PredictedRate,
    pub holder: Option<HolderModulus>,
    pub theta0: Option<f64>,
    pub hypotheses: Hypotheses,
}

impl AsymptoticsReport {
    fn empty(traj: &BlowupTrajectory) -> Self {
        Self {
            accepted: false,
            stage: Stage::Tstar,
            failure: None,
            stop_reason: traj.stop_reason,
            growth_decades: traj.growth_decades(),
            tstar_hat: None,
            tstar_uncertainty: None,
            window: None,
            lambda_hat: None,
            mu: None,
            lambda_position: None,
            v_star: None,
            xi_star: None,
            cert_eigen_residual: None,
            cert_h_residual: None,
            limit_deviation: None,
            band: None,
            times: traj.times.clone(),
            lambda_series: Vec::new(),
            v1_series: Vec::new(),
            v2_series: Vec::new(),
            error_series: Vec::new(),
            fitted_rate: None,
            fitted_exponent_range: None,
            predicted_rate: PredictedRate::Unavailable {
                reason: "analysis incomplete".into(),
            },
            holder: None,
            theta0: None,
            hypotheses: Hypotheses::default(),
        }
    }

    fn fail(mut self, stage: Stage, err: impl fmt::Display) -> Self {
        self.stage = stage;
        self.failure = Some(err.to_string());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// CSV of `u = T̂* − t` against the error over the window, for log-log
    /// plots.
    pub fn error_csv(&self) -> String {
        let mut out = String::from("u,error\n");
        if let (Some(tstar), Some((ws, _))) = (self.tstar_hat, self.window) {
            for (k, e) in self.error_series.iter().enumerate() {
                out.push_str(&format!("{},{}\n", tstar - self.times[ws + k], e));
            }
        }
        out
    }

    /// CSV of the per-sample series; window-only columns are empty outside
    /// the window.
    pub fn series_csv(&self) -> String {
        let mut out = String::from("t,lambda,V1,V2,error\n");
        let (ws, _) = self.window.unwrap_or((usize::MAX, usize::MAX));
        for i in 0..self.times.len() {
            let get = |v: &Vec<f64>, k: usize| v.get(k).map(|x| x.to_string()).unwrap_or_default();
            let err = if i >= ws {
                get(&self.error_series, i - ws)
            } else {
                String::new()
            };
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.times[i],
                get(&self.lambda_series, i),
                get(&self.v1_series, i),
                get(&self.v2_series, i),
                err
            ));
        }
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.10e}"))
}

fn fmt_vec(v: &Option<Vec<f64>>) -> String {
    v.as_ref().map_or("-".into(), |x| {
        let parts: Vec<String> = x.iter().map(|c| format!("{c:.8}")).collect();
        format!("[{}]", parts.join(", "))
    })
}

fn fmt_rate(r: &RateModel) -> String {
    match r.kind {
        RateKind::Power { exponent } => format!("power (T*-t)^{exponent:.4}"),
        RateKind::Log { exponent } => format!("log |ln(T*-t)|^-{exponent:.4}"),
    }
}

impl fmt::Display for AsymptoticsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "accepted:        {}", self.accepted)?;
        writeln!(f, "stage:           {:?}", self.stage)?;
        if let Some(e) = &self.failure {
            writeln!(f, "failure:         {e}")?;
        }
        writeln!(f, "stop reason:     {:?}", self.stop_reason)?;
        writeln!(f, "growth:          {:.2} decades", self.growth_decades)?;
        writeln!(
            f,
            "T* estimate:     {} +/- {}",
            fmt_opt(self.tstar_hat),
            fmt_opt(self.tstar_uncertainty)
        )?;
        writeln!(f, "Lambda:          {}", fmt_opt(self.lambda_hat))?;
        writeln!(
            f,
            "mu:              {}",
            self.mu.map_or("inf".into(), |m| format!("{m}"))
        )?;
        writeln!(f, "xi*:             {}", fmt_vec(&self.xi_star))?;
        writeln!(f, "v*:              {}", fmt_vec(&self.v_star))?;
        writeln!(
            f,
            "certificate:     eigen {} / H {}",
            fmt_opt(self.cert_eigen_residual),
            fmt_opt(self.cert_h_residual)
        )?;
        writeln!(f, "limit deviation: {}", fmt_opt(self.limit_deviation))?;
        if let Some((lo, hi)) = self.band {
            writeln!(f, "band:            [{lo:.4}, {hi:.4}] |xi*|")?;
        }
        match &self.fitted_rate {
            Some(r) => writeln!(f, "fitted rate:     {}", fmt_rate(&r.selected))?,
            None => writeln!(f, "fitted rate:     -")?,
        }
        match &self.predicted_rate {
            PredictedRate::Predicted {
                prediction: Prediction::Rate(r),
            } => writeln!(f, "predicted rate:  {}", fmt_rate(r))?,
            PredictedRate::Predicted {
                prediction: Prediction::Exact,
            } => writeln!(f, "predicted rate:  exact")?,
            PredictedRate::HypothesisViolated { reason } => {
                writeln!(f, "predicted rate:  hypothesis violated ({reason})")?
            }
            PredictedRate::Unavailable { reason } => {
                writeln!(f, "predicted rate:  unavailable ({reason})")?
            }
        }
        write!(
            f,
            "hypotheses:      Z1 {:?}, Z2 {:?}, Z3 {:?}, composite Z1 {:?}, log exponent {:?}",
            self.hypotheses.z1_finite,
            self.hypotheses.z2_finite,
            self.hypotheses.z3_finite,
            self.hypotheses.composite_z1_finite,
            self.hypotheses.log_exponent
        )
    }
}

/// `E₀` bound implied along the solution by a general perturbation, given
/// `|y(t)| ≥ c_lower (T*−t)^{−1/α}`.
fn perturbation_envelope(
    g: &Perturbation,
    alpha: f64,
    c_lower: f64,
    tstar: f64,
    t0: f64,
) -> Option<Result<Envelope, EnvelopeError>> {
    match g {
        Perturbation::Zero => Some(Envelope::zero(tstar, t0)),
        Perturbation::Linear { c } => Some(Envelope::power(
            c.abs() * c_lower.powf(-alpha),
            1.0,
            tstar,
            t0,
        )),
        Perturbation::PowerDecay { m, delta, .. } => Some(Envelope::power(
            m * c_lower.powf(-delta),
            delta / alpha,
            tstar,
            t0,
        )),
        // ln|y| ≥ |ln(T*−t)|/(2α) close to T*
        Perturbation::LogDecay { m, p, .. } => {
            if tstar - t0 < 1.0 {
                Some(Envelope::log(m * (2.0 * alpha).powf(*p), *p, tstar, t0))
            } else {
                None
            }
        }
        Perturbation::Custom(_) => None,
    }
}

fn exponent_at(
    traj: &BlowupTrajectory,
    window: Range<usize>,
    tstar: f64,
    xi: &DVector<f64>,
    floor: f64,
    power_preference: f64,
) -> Option<f64> {
    let times: Vec<f64> = window.clone().map(|i| traj.times[i]).collect();
    let errs: Vec<f64> = window
        .map(|i| (rescaled(traj, tstar, i) - xi).norm())
        .collect();
    fit_rate_with(&times, &errs, tstar, floor, power_preference)
        .ok()
        .map(|f| f.selected.exponent())
}

/// Runs the whole analysis chain and reports how far it got.
pub fn analyze(
    traj: &BlowupTrajectory,
    spec: &ProblemSpec,
    sd: &SpectralData,
    opts: &AnalysisOptions,
) -> AsymptoticsReport {
    let mut rep = AsymptoticsReport::empty(traj);
    if matches!(
        traj.stop_reason,
        StopReason::MaxSteps | StopReason::LeftDomain
    ) {
        return rep.fail(Stage::Tstar, AsymptoticsError::NotBlowup(traj.stop_reason));
    }
    let alpha = spec.alpha();

    let mut est = match estimate_tstar_with(traj, spec.t0, opts.window_decades) {
        Ok(e) => e,
        Err(e) => return rep.fail(Stage::Tstar, e),
    };
    let window = est.window();
    rep.window = Some((window.start, window.end));

    rep.lambda_series = dirichlet_series(traj, sd);
    let id = match identify_lambda(&rep.lambda_series, &traj.norms, sd) {
        Ok(id) => id,
        Err(e) => return rep.fail(Stage::Lambda, e),
    };
    rep.lambda_hat = Some(id.lambda);
    rep.mu = id.mu;
    rep.lambda_position = Some(id.position);

    let project = |t: f64| {
        projection_diagnostics(
            traj,
            sd,
            id.lambda,
            t,
            window.clone(),
            opts.noise_floor,
            opts.power_preference,
        )
    };
    let mut proj = match project(est.value) {
        Ok(p) => p,
        Err(e) => return rep.fail(Stage::Projection, e),
    };
    if proj.rate.is_some() {
        if let Some(refined) = refine_tstar(traj, &est) {
            if let Ok(p) = project(refined.value) {
                est = refined;
                proj = p;
            }
        }
    }
    let tstar = est.value;
    rep.tstar_hat = Some(tstar);
    rep.tstar_uncertainty = Some(est.uncertainty);
    let xi = DVector::from_column_slice(&proj.xi_star);
    let xi_norm = xi.norm();
    let ratios: Vec<f64> = window
        .clone()
        .map(|i| (tstar - traj.times[i]).powf(1.0 / alpha) * traj.norms[i] / xi_norm)
        .collect();
    rep.band = Some((
        ratios.iter().copied().fold(f64::INFINITY, f64::min),
        ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    ));
    rep.v1_series = proj.v1;
    rep.v2_series = proj.v2;
    rep.error_series = proj.errors;
    rep.v_star = Some(proj.v_star.clone());
    rep.xi_star = Some(proj.xi_star);

    let cert = match verify_certificate(&xi, id.lambda, sd, &spec.h) {
        Ok(c) => c,
        Err(e) => return rep.fail(Stage::Certificate, e),
    };
    rep.cert_eigen_residual = Some(cert.eigen_residual);
    rep.cert_h_residual = Some(cert.h_residual);
    let deviation = rep.v2_series.last().copied().unwrap_or(f64::NAN);
    rep.limit_deviation = Some(deviation);
    rep.accepted = deviation <= LIMIT_DEVIATION;
    if !rep.accepted {
        rep.stage = Stage::Certificate;
        rep.failure = Some(
            AsymptoticsError::NotConverged {
                deviation,
                limit: LIMIT_DEVIATION,
            }
            .to_string(),
        );
    }

    rep.fitted_rate = proj.rate;
    if rep.fitted_rate.is_some() && est.uncertainty > 0.0 {
        let floor = opts.noise_floor * xi_norm;
        let lo = exponent_at(
            traj,
            window.clone(),
            tstar - est.uncertainty,
            &xi,
            floor,
            opts.power_preference,
        );
        let hi = exponent_at(
            traj,
            window.clone(),
            tstar + est.uncertainty,
            &xi,
            floor,
            opts.power_preference,
        );
        if let (Some(a), Some(b)) = (lo, hi) {
            rep.fitted_exponent_range = Some((a.min(b), a.max(b)));
        }
    }
    if rep.fitted_rate.is_none() && rep.failure.is_none() {
        rep.stage = Stage::Rate;
        rep.failure = Some(AsymptoticsError::AllErrorsAtNoiseFloor.to_string());
    }

    // theory side: hypotheses and the predicted rate
    let v_star = DVector::from_column_slice(&proj.v_star);
    let holder = match spec
        .h
        .holder_probe(&v_star, opts.holder_radius, opts.holder_samples)
    {
        Ok(h) => h,
        Err(e) => {
            rep.predicted_rate = PredictedRate::Unavailable {
                reason: e.to_string(),
            };
            return finish(rep);
        }
    };
    let gamma = holder.gamma;
    rep.holder = Some(holder.clone());
    let theta0 = match id.mu {
        Some(mu) => {
            let h_conj = if sd.is_symmetric() {
                spec.h.clone()
            } else {
                spec.h.conjugated(sd)
            };
            match h_conj.sphere_bounds(opts.bounds_samples_per_dim * sd.dim()) {
                Ok(b) => Some(theta0_bound(b.c1, b.c2, mu, alpha, sd.highest())),
                Err(e) => {
                    rep.predicted_rate = PredictedRate::Unavailable {
                        reason: e.to_string(),
                    };
                    return finish(rep);
                }
            }
        }
        None => None,
    };
    rep.theta0 = theta0;

    let t0 = spec.t0;
    let envelope = match &spec.kind {
        SystemKind::General { g } => {
            let c_lower = ratios.iter().copied().fold(f64::INFINITY, f64::min) * xi_norm;
            perturbation_envelope(g, alpha, c_lower, tstar, t0)
        }
        SystemKind::Forced { forcing, envelope }
        | SystemKind::Reference {
            forcing, envelope, ..
        } => match envelope {
            Some(env) => Some(env.with_tstar(tstar)),
            None if forcing.is_zero() => Some(Envelope::zero(tstar, t0)),
            None => None,
        },
    };
    let env = match envelope {
        Some(Ok(env)) => env,
        Some(Err(e)) => {
            rep.predicted_rate = PredictedRate::Unavailable {
                reason: e.to_string(),
            };
            return finish(rep);
        }
        None => {
            rep.predicted_rate = PredictedRate::Unavailable {
                reason: "no forcing envelope available".into(),
            };
            return finish(rep);
        }
    };

    let ints = integrals_of(&env);
    rep.hypotheses.z1_finite = HypothesisStatus::from_bool(ints.z1.is_finite());
    rep.hypotheses.z2_finite = HypothesisStatus::from_bool(ints.z2.is_finite());
    rep.hypotheses.z3_finite = HypothesisStatus::from_bool(ints.z3.is_finite());
    let log_p = match &env.family {
        EnvelopeFamily::Log { p, .. } => Some(*p),
        EnvelopeFamily::Tabulated {
            tail: TailLaw::Log { p, .. },
            ..
        } => Some(*p),
        _ => None,
    };
    if let Some(p) = log_p {
        rep.hypotheses.log_exponent = HypothesisStatus::from_bool(p > 1.0 + 1.0 / gamma);
    }
    let window_times: Vec<f64> = window.clone().map(|i| traj.times[i]).collect();
    let v1w: Vec<f64> = window.clone().map(|i| rep.v1_series[i]).collect();
    let v2w: Vec<f64> = window.clone().map(|i| rep.v2_series[i]).collect();
    if let Ok(comp) = composite_envelope(&env, &window_times, &v1w, &v2w, &holder) {
        rep.hypotheses.composite_z1_finite = HypothesisStatus::from_bool(comp.z1.is_finite());
    }

    rep.predicted_rate = match predict_rate(&env, gamma, theta0.unwrap_or(0.0), id.position) {
        Ok(prediction) => PredictedRate::Predicted { prediction },
        Err(EnvelopeError::HypothesisViolated(reason)) => {
            PredictedRate::HypothesisViolated { reason }
        }
        Err(e) => PredictedRate::Unavailable {
            reason: e.to_string(),
        },
    };
    finish(rep)
}

fn finish(mut rep: AsymptoticsReport) -> AsymptoticsReport {
    if rep.failure.is_none() {
        rep.stage = Stage::Done;
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{integrate_blowup, Control};
    use crate::problem::{certified_profile, manufactured_reference, Corrector, Forcing};
    use crate::spectral::decompose;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    fn synthetic(alpha: f64, tstar: f64, count: usize) -> BlowupTrajectory {
        // |y|^{-α} = 2(T* − t), sampled geometrically in T* − t
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut norms = Vec::new();
        let mut inv = Vec::new();
        for k in 0..count {
            let u = tstar * 2f64.powf(-(k as f64) / 4.0);
            let q = 2.0 * u;
            let r = q.powf(-1.0 / alpha);
            times.push(tstar - u);
            states.push(v(&[r]));
            norms.push(r);
            inv.push(q);
        }
        BlowupTrajectory {
            times,
            states,
            norms,
            inv_norm_pow: inv,
            alpha,
            stop_reason: StopReason::NormCap,
            accepted: 0,
            rejected: 0,
            rel_tol: 1e-10,
            abs_tol: 0.0,
            norm_cap: 0.0,
        }
    }

    #[test]
    fn exact_affine_data_gives_exact_root() {
        let traj = synthetic(1.0, 1.0, 160);
        let est = estimate_tstar(&traj, 0.0).unwrap();
        assert_relative_eq!(est.value, 1.0, epsilon = 1e-12);
        assert!(est.uncertainty < 1e-12);
    }

    #[test]
    fn too_little_growth_is_rejected() {
        let traj = synthetic(1.0, 1.0, 20);
        assert!(matches!(
            estimate_tstar(&traj, 0.0),
            Err(AsymptoticsError::InsufficientGrowth { .. })
        ));
    }

    #[test]
    fn window_covers_the_prescribed_decades() {
        let norms: Vec<f64> = (0..=40).map(|k| 10f64.powf(k as f64 / 8.0)).collect();
        let w = analysis_window(&norms);
        assert_relative_eq!(norms[w.start], 10f64.powf(3.0), max_relative = 1e-12);
        assert_relative_eq!(norms[w.end - 1], 10f64.powf(4.5), max_relative = 1e-12);
    }

    #[test]
    fn dirichlet_quotient_examples() {
        let sd = decompose(&DMatrix::from_diagonal(&v(&[1.0, 3.0])), 1e-10).unwrap();
        let mut traj = synthetic(1.0, 1.0, 2);
        traj.states = vec![v(&[1.0, 1.0]), v(&[0.0, 1.0])];
        assert_eq!(dirichlet_series(&traj, &sd), vec![2.0, 3.0]);
    }

    #[test]
    fn lambda_snapping() {
        let sd = decompose(&DMatrix::from_diagonal(&v(&[1.0, 2.0, 5.0])), 1e-10).unwrap();
        let id =
            identify_lambda(&[1.5, 1.9, 2.001, 2.001], &[1.0, 10.0, 50.0, 100.0], &sd).unwrap();
        assert_eq!(id.lambda, 2.0);
        assert_eq!(id.mu, Some(1.0));
        assert_eq!(id.position, LambdaPosition::Interior);
        let err = identify_lambda(&[1.5, 1.5], &[1.0, 2.0], &sd).unwrap_err();
        assert!(matches!(err, AsymptoticsError::AmbiguousLimit { .. }));
        let single = decompose(&(DMatrix::identity(2, 2) * 4.0), 1e-10).unwrap();
        let id = identify_lambda(&[4.0], &[1.0], &single).unwrap();
        assert_eq!(
            (id.lambda, id.mu, id.position),
            (4.0, None, LambdaPosition::Single)
        );
    }

    #[test]
    fn certificate_examples() {
        let h = HomogeneousFn::euclidean(1, 2.0).unwrap();
        let sd = decompose(&DMatrix::identity(1, 1), 1e-10).unwrap();
        let c = verify_certificate(&v(&[0.5f64.sqrt()]), 1.0, &sd, &h).unwrap();
        assert!(c.eigen_residual < 1e-15 && c.h_residual < 1e-15);

        let h = HomogeneousFn::euclidean(2, 1.0).unwrap();
        let sd = decompose(&DMatrix::from_diagonal(&v(&[1.0, 3.0])), 1e-10).unwrap();
        let xi = v(&[0.0, 1.0 / 3.0]);
        let c = verify_certificate(&xi, 3.0, &sd, &h).unwrap();
        assert!(c.eigen_residual < 1e-15 && c.h_residual < 1e-15);
        let c = verify_certificate(&(xi * (1.0 + 1e-3)), 3.0, &sd, &h).unwrap();
        assert_relative_eq!(c.h_residual, 1e-3, max_relative = 1e-6);
    }

    #[test]
    fn fit_rate_recovers_synthetic_laws() {
        let ts: Vec<f64> = (0..40).map(|k| 1.0 - 0.5 * 0.7f64.powi(k)).collect();
        let pw: Vec<f64> = ts.iter().map(|t| 2.0 * (1.0 - t).sqrt()).collect();
        let fit = fit_rate(&ts, &pw, 1.0, 0.0).unwrap();
        assert!(fit.selected.is_power());
        assert_relative_eq!(fit.selected.exponent(), 0.5, epsilon = 1e-10);
        assert_relative_eq!(fit.selected.amplitude, 2.0, epsilon = 1e-9);
        assert!(fit.selected.fit_residual < 1e-12);

        let ts: Vec<f64> = (0..40).map(|k| 1.0 - 0.5 * 0.3f64.powi(k)).collect();
        let lg: Vec<f64> = ts
            .iter()
            .map(|t| 3.0 * (1.0 - t).ln().abs().powi(-2))
            .collect();
        let fit = fit_rate(&ts, &lg, 1.0, 0.0).unwrap();
        assert!(!fit.selected.is_power());
        assert_relative_eq!(fit.selected.exponent(), 2.0, epsilon = 1e-10);
        assert_relative_eq!(fit.selected.amplitude, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn noise_floor_errors_are_reported() {
        let ts: Vec<f64> = (0..20).map(|k| 1.0 - 0.5f64.powi(k)).collect();
        let errs = vec![1e-14; 20];
        assert_eq!(
            fit_rate(&ts, &errs, 1.0, 1e-10),
            Err(AsymptoticsError::AllErrorsAtNoiseFloor)
        );
    }

    #[test]
    fn scalar_reference_run() {
        let p = ProblemSpec::reference(1.0, 2.0, Forcing::Zero, None, 0.0, v(&[1.0])).unwrap();
        let sd = decompose(&p.matrix, 1e-10).unwrap();
        let traj = integrate_blowup(&p, &sd, &Control::default().with_norm_cap(1e6)).unwrap();
        let rep = analyze(
            &traj,
            &p,
            &sd,
            &AnalysisOptions::for_tolerance(traj.rel_tol),
        );
        assert!(rep.accepted, "{rep}");
        assert!((rep.tstar_hat.unwrap() - 0.5).abs() <= 1e-6);
        assert!((rep.xi_star.unwrap()[0] - 0.5f64.sqrt()).abs() <= 1e-4);
        assert!(rep.cert_eigen_residual.unwrap() <= 1e-12);
        assert!(rep.cert_h_residual.unwrap() <= 1e-4);
        assert_eq!(
            rep.predicted_rate,
            PredictedRate::Predicted {
                prediction: Prediction::Exact
            }
        );
    }

    #[test]
    fn manufactured_power_rate_is_measured() {
        let xi =
            certified_profile(&v(&[1.0]), 1.0, &HomogeneousFn::euclidean(1, 1.0).unwrap()).unwrap();
        let corr = Corrector::Power {
            c: 0.5,
            delta: 0.5,
            w: v(&[1.0]),
        };
        let (p, _) = manufactured_reference(1.0, 1.0, xi, corr, 1.0, 0.0).unwrap();
        let sd = decompose(&p.matrix, 1e-10).unwrap();
        let traj = integrate_blowup(&p, &sd, &Control::default().with_norm_cap(1e7)).unwrap();
        let rep = analyze(
            &traj,
            &p,
            &sd,
            &AnalysisOptions::for_tolerance(traj.rel_tol),
        );
        assert!(rep.accepted, "{rep}");
        assert!((rep.tstar_hat.unwrap() - 1.0).abs() <= 1e-5, "{rep}");
        let fit = rep.fitted_rate.unwrap().selected;
        assert!(fit.is_power());
        assert!((fit.exponent() - 0.5).abs() <= 0.075, "{}", fit.exponent());
    }

    #[test]
    fn report_json_has_canonical_names() {
        let p = ProblemSpec::reference(1.0, 1.0, Forcing::Zero, None, 0.0, v(&[1.0])).unwrap();
        let sd = decompose(&p.matrix, 1e-10).unwrap();
        let traj = integrate_blowup(&p, &sd, &Control::default().with_norm_cap(1e6)).unwrap();
        let rep = analyze(&traj, &p, &sd, &AnalysisOptions::default());
        let json = rep.to_json();
        for key in [
            "\"Tstar_hat\"",
            "\"Lambda_hat\"",
            "\"cert_H_residual\"",
            "\"V1_series\"",
        ] {
            assert!(json.contains(key), "{key}");
        }
        let back: AsymptoticsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.tstar_hat, rep.tstar_hat);
        assert!(rep.series_csv().starts_with("t,lambda,V1,V2,error\n"));
    }
}

//! Positively homogeneous nonlinearities `H(x) = |x|^α K(x/|x|)` and probes
//! for their sphere bounds and local Hölder modulus.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::SpectralData;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum HomogeneousError {
    #[error("H is undefined at the zero vector")]
    ZeroVector,
    #[error("degree must be positive, got {0}")]
    InvalidDegree(f64),
    #[error("kernel value {value} at sphere point {point:?} is not positive")]
    NonPositiveValueDetected { value: f64, point: Vec<f64> },
    #[error("invalid kernel parameters: {0}")]
    InvalidKernel(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
}

/// One term `coef · Π |vᵢ|^powers[i]` of a custom sphere polynomial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub powers: Vec<f64>,
}

type SphereFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Kernel {
    /// `H = |x|^α`
    Euclidean,
    /// `H = (x·Dx)^{α/2}` with `D` symmetric positive definite.
    QuadraticForm(DMatrix<f64>),
    /// `H = ‖x‖_p^α`
    PNorm(f64),
    /// Sphere restriction is `Σ coef Π |vᵢ|^powers`.
    CustomPolynomial(Vec<Monomial>),
    /// Arbitrary sphere restriction; must be pure and positive.
    Custom(SphereFn),
    /// `x ↦ H(M x)` for an invertible `M`.
    Linear {
        map: DMatrix<f64>,
        inner: Box<HomogeneousFn>,
    },
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Euclidean => write!(f, "Euclidean"),
            Kernel::QuadraticForm(d) => write!(f, "QuadraticForm({d:?})"),
            Kernel::PNorm(p) => write!(f, "PNorm({p})"),
            Kernel::CustomPolynomial(t) => write!(f, "CustomPolynomial({t:?})"),
            Kernel::Custom(_) => write!(f, "Custom(<fn>)"),
            Kernel::Linear { map, inner } => write!(f, "Linear({map:?}, {inner:?})"),
        }
    }
}

/// Degree-α positively homogeneous function on `ℝⁿ∖{0}`.
#[derive(Debug, Clone)]
pub struct HomogeneousFn {
    dim: usize,
    alpha: f64,
    kernel: Kernel,
}

impl HomogeneousFn {
    pub fn new(dim: usize, alpha: f64, kernel: Kernel) -> Result<Self, HomogeneousError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(HomogeneousError::InvalidDegree(alpha));
        }
        match &kernel {
            Kernel::QuadraticForm(d) if d.shape() != (dim, dim) => {
                return Err(HomogeneousError::InvalidKernel(format!(
                    "quadratic form must be {dim}x{dim}"
                )))
            }
            Kernel::PNorm(p) if !(*p >= 1.0) => {
                return Err(HomogeneousError::InvalidKernel(format!(
                    "p-norm needs p >= 1, got {p}"
                )))
            }
            Kernel::CustomPolynomial(terms) => {
                if terms.is_empty() || terms.iter().any(|t| t.powers.len() != dim) {
                    return Err(HomogeneousError::InvalidKernel(format!(
                        "custom polynomial needs terms with {dim} powers each"
                    )));
                }
            }
            Kernel::Linear { map, inner } if map.shape() != (dim, dim) || inner.dim != dim => {
                return Err(HomogeneousError::InvalidKernel(
                    "linear map dimension".into(),
                ))
            }
            _ => {}
        }
        Ok(Self { dim, alpha, kernel })
    }

    /// `H(x) = |x|^α`.
    pub fn euclidean(dim: usize, alpha: f64) -> Result<Self, HomogeneousError> {
        Self::new(dim, alpha, Kernel::Euclidean)
    }

    /// Kernel given by an arbitrary function on the unit sphere.
    pub fn from_sphere_fn<F>(dim: usize, alpha: f64, f: F) -> Result<Self, HomogeneousError>
    where
        F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        Self::new(dim, alpha, Kernel::Custom(Arc::new(f)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// Value of `H` on the unit vector `v`.
    pub fn sphere_eval(&self, v: &DVector<f64>) -> f64 {
        match &self.kernel {
            Kernel::Euclidean => 1.0,
            Kernel::QuadraticForm(d) => v.dot(&(d * v)).powf(self.alpha / 2.0),
            Kernel::PNorm(p) => v
                .iter()
                .map(|c| c.abs().powf(*p))
                .sum::<f64>()
                .powf(self.alpha / p),
            Kernel::CustomPolynomial(terms) => terms
                .iter()
                .map(|t| {
                    t.coef
                        * v.iter()
                            .zip(&t.powers)
                            .map(|(c, &e)| if e == 0.0 { 1.0 } else { c.abs().powf(e) })
                            .product::<f64>()
                })
                .sum(),
            Kernel::Custom(f) => f(v),
            Kernel::Linear { map, inner } => inner.eval_nonzero(&(map * v)),
        }
    }

    /// `H(x)`; errors on the zero vector.
    pub fn evaluate(&self, x: &DVector<f64>) -> Result<f64, HomogeneousError> {
        let r = x.norm();
        if r == 0.0 {
            return Err(HomogeneousError::ZeroVector);
        }
        Ok(r.powf(self.alpha) * self.sphere_eval(&(x / r)))
    }

    /// `H(x)` for a vector known to be nonzero.
    pub(crate) fn eval_nonzero(&self, x: &DVector<f64>) -> f64 {
        let r = x.norm();
        r.powf(self.alpha) * self.sphere_eval(&(x / r))
    }

    /// The conjugated function `z ↦ H(S⁻¹ z)`.
    pub fn conjugated(&self, sd: &SpectralData) -> Self {
        Self {
            dim: self.dim,
            alpha: self.alpha,
            kernel: Kernel::Linear {
                map: sd.conjugator_inverse().clone(),
                inner: Box::new(self.clone()),
            },
        }
    }

    /// Estimates `c1 = min K` and `c2 = max K` over the unit sphere by a
    /// deterministic low-discrepancy sample plus local pattern refinement.
    pub fn sphere_bounds(&self, samples: usize) -> Result<SphereBounds, HomogeneousError> {
        let needed = self.dim * 100;
        if samples < needed {
            return Err(HomogeneousError::TooFewSamples {
                needed,
                got: samples,
            });
        }
        let points = sphere_points(self.dim, samples);
        let mut values = Vec::with_capacity(points.len());
        for p in &points {
            let k = self.checked_sphere_eval(p)?;
            values.push(k);
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));

        const STARTS: usize = 4;
        let mut c1 = values[order[0]];
        let mut c2 = values[*order.last().unwrap()];
        for &i in order.iter().take(STARTS) {
            c1 = c1.min(self.refine(&points[i], values[i], 1.0)?);
        }
        for &i in order.iter().rev().take(STARTS) {
            c2 = c2.max(self.refine(&points[i], values[i], -1.0)?);
        }
        Ok(SphereBounds {
            c1,
            c2,
            sample_count: samples,
        })
    }

    fn checked_sphere_eval(&self, v: &DVector<f64>) -> Result<f64, HomogeneousError> {
        let k = self.sphere_eval(v);
        if !(k > 0.0 && k.is_finite()) {
            return Err(HomogeneousError::NonPositiveValueDetected {
                value: k,
                point: v.iter().copied().collect(),
            });
        }
        Ok(k)
    }

    /// Three rounds of compass search on the sphere; `sign = 1` minimizes.
    fn refine(&self, start: &DVector<f64>, value: f64, sign: f64) -> Result<f64, HomogeneousError> {
        let mut best = start.clone();
        let mut best_val = value;
        let mut step = 0.5 / (self.dim as f64).sqrt().max(1.0) * (2.0 * PI / 64.0);
        for _ in 0..3 {
            let mut improved = true;
            let mut sweeps = 0;
            while improved && sweeps < 50 {
                improved = false;
                sweeps += 1;
                for i in 0..self.dim {
                    for dir in [1.0, -1.0] {
                        let mut cand = best.clone();
                        cand[i] += dir * step;
                        let norm = cand.norm();
                        if norm == 0.0 {
                            continue;
                        }
                        cand /= norm;
                        let k = self.checked_sphere_eval(&cand)?;
                        if sign * (k - best_val) < 0.0 {
                            best = cand;
                            best_val = k;
                            improved = true;
                        }
                    }
                }
            }
            step /= 4.0;
        }
        Ok(best_val)
    }

    /// Fits a local modulus `|H(x) − H(v*)| ≤ C|x − v*|^γ` on the sphere
    /// near the unit vector `anchor`, probing chord radii `r·2^{-k}`,
    /// `k = 0..=6`.
    pub fn holder_probe(
        &self,
        anchor: &DVector<f64>,
        r: f64,
        samples: usize,
    ) -> Result<HolderModulus, HomogeneousError> {
        if !(r > 0.0 && r < 1.0) {
            return Err(HomogeneousError::InvalidKernel(format!(
                "probe radius must lie in (0, 1), got {r}"
            )));
        }
        let norm = anchor.norm();
        if norm == 0.0 {
            return Err(HomogeneousError::ZeroVector);
        }
        let anchor = anchor / norm;
        let h0 = self.sphere_eval(&anchor);
        let tangents = tangent_directions(&anchor, samples.max(8) / HOLDER_LEVELS);

        let mut probes = Vec::new();
        let mut level_max = Vec::new();
        for k in 0..HOLDER_LEVELS {
            let s = r * 0.5_f64.powi(k as i32);
            let theta = 2.0 * (s / 2.0).asin();
            let mut worst = 0.0_f64;
            for d in &tangents {
                let x = &anchor * theta.cos() + d * theta.sin();
                let diff = (self.sphere_eval(&x) - h0).abs();
                worst = worst.max(diff);
                probes.push((s, diff));
            }
            level_max.push((s, worst));
        }

        let floor = 1e-13 * h0.abs().max(1.0);
        let usable: Vec<(f64, f64)> = level_max
            .iter()
            .filter(|(_, m)| *m > floor)
            .map(|&(s, m)| (s.ln(), m.ln()))
            .collect();
        if usable.len() < 2 {
            return Ok(HolderModulus {
                gamma: 1.0,
                c: 0.0,
                r,
                anchor: anchor.iter().copied().collect(),
                degenerate: true,
            });
        }
        let (slope, _) = crate::fit::linear_fit(&usable);
        let gamma = slope.clamp(1e-3, 1.0);
        let c = 1.5
            * probes
                .iter()
                .map(|&(s, d)| d / s.powf(gamma))
                .fold(0.0, f64::max);
        Ok(HolderModulus {
            gamma,
            c,
            r,
            anchor: anchor.iter().copied().collect(),
            degenerate: false,
        })
    }
}

const HOLDER_LEVELS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereBounds {
    pub c1: f64,
    pub c2: f64,
    pub sample_count: usize,
}

/// Power-form modulus `ω(s) = C s^γ`, valid for `s < r` around `anchor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderModulus {
    pub gamma: f64,
    pub c: f64,
    pub r: f64,
    pub anchor: Vec<f64>,
    /// `H` was constant on every probe; `γ = 1`, `C = 0` by convention.
    pub degenerate: bool,
}

impl HolderModulus {
    pub fn omega(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else {
            self.c * s.powf(self.gamma)
        }
    }

    /// Plain `ω(s) = C s^γ` modulus without an anchor.
    pub fn power(c: f64, gamma: f64) -> Self {
        Self {
            gamma,
            c,
            r: 0.5,
            anchor: Vec::new(),
            degenerate: c == 0.0,
        }
    }
}

/// Deterministic, roughly uniform points on `S^{n-1}`.
///
/// Uses equally spaced angles on the circle and Halton-driven Gaussian
/// directions in higher dimension.
pub fn sphere_points(dim: usize, count: usize) -> Vec<DVector<f64>> {
    match dim {
        0 => Vec::new(),
        1 => vec![
            DVector::from_element(1, 1.0),
            DVector::from_element(1, -1.0),
        ],
        2 => (0..count)
            .map(|k| {
                let th = 2.0 * PI * k as f64 / count as f64;
                DVector::from_vec(vec![th.cos(), th.sin()])
            })
            .collect(),
        _ => {
            let primes = first_primes(2 * dim);
            let mut out = Vec::with_capacity(count + 2 * dim);
            // coordinate axes are always included
            for i in 0..dim {
                for s in [1.0, -1.0] {
                    let mut e = DVector::zeros(dim);
                    e[i] = s;
                    out.push(e);
                }
            }
            let mut k = 1u64;
            while out.len() < count + 2 * dim {
                let v = DVector::from_fn(dim, |i, _| {
                    let u1 = halton(k, primes[2 * i]).max(1e-12);
                    let u2 = halton(k, primes[2 * i + 1]);
                    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
                });
                k += 1;
                let norm = v.norm();
                if norm > 1e-12 {
                    out.push(v / norm);
                }
            }
            out
        }
    }
}

/// Unit vectors orthogonal to `anchor`.
fn tangent_directions(anchor: &DVector<f64>, count: usize) -> Vec<DVector<f64>> {
    let n = anchor.len();
    if n < 2 {
        return Vec::new();
    }
    sphere_points(n, count.max(2 * n))
        .into_iter()
        .filter_map(|p| {
            let t = &p - anchor * anchor.dot(&p);
            let norm = t.norm();
            (norm > 1e-6).then(|| t / norm)
        })
        .collect()
}

fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(count);
    let mut c = 2u64;
    while primes.len() < count {
        if primes
            .iter()
            .take_while(|&&p| p * p <= c)
            .all(|&p| c % p != 0)
        {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

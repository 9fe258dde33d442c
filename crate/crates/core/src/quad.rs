//! Adaptive Gauss–Kronrod (7, 15) quadrature with endpoint substitutions.

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum QuadError {
    #[error("integrand is not finite at {0}")]
    NonFinite(f64),
    #[error("tolerance not reached after {intervals} subintervals (estimate {estimate:e}, error {error:e})")]
    NotConverged {
        intervals: usize,
        estimate: f64,
        error: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 2000;

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<(f64, f64), QuadError> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    if !fc.is_finite() {
        return Err(QuadError::NonFinite(c));
    }
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let (x1, x2) = (c - dx, c + dx);
        let (f1, f2) = (f(x1), f(x2));
        if !f1.is_finite() {
            return Err(QuadError::NonFinite(x1));
        }
        if !f2.is_finite() {
            return Err(QuadError::NonFinite(x2));
        }
        kronrod += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    Ok((kronrod * h, ((kronrod - gauss) * h).abs()))
}

/// `∫_a^b f` to relative tolerance `rel_tol` (absolute floor `abs_tol`),
/// by global adaptive bisection of the worst interval.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<QuadResult, QuadError> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    let (v, e) = gk15(&f, a, b)?;
    let mut intervals = vec![(a, b, v, e)];
    let mut evaluations = 15;
    loop {
        let value: f64 = intervals.iter().map(|i| i.2).sum();
        let error: f64 = intervals.iter().map(|i| i.3).sum();
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return Ok(QuadResult {
                value,
                error,
                evaluations,
            });
        }
        if intervals.len() >= MAX_INTERVALS {
            return Err(QuadError::NotConverged {
                intervals: intervals.len(),
                estimate: value,
                error,
            });
        }
        let worst = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap();
        let (lo, hi, _, _) = intervals.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // interval cannot be split further in floating point
            return Err(QuadError::NotConverged {
                intervals: intervals.len() + 1,
                estimate: value,
                error,
            });
        }
        let (v1, e1) = gk15(&f, lo, mid)?;
        let (v2, e2) = gk15(&f, mid, hi)?;
        evaluations += 30;
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
}

/// `∫_a^∞ f` through `s = a + L(eʷ − 1)`, `w = x/(1−x)`, `x ∈ [0, 1)`,
/// with `L = max(1, |a|)`. Algebraic tails become exponential in `w`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<QuadResult, QuadError> {
    let scale = a.abs().max(1.0);
    integrate(
        |x| {
            let one_minus = 1.0 - x;
            let w = x / one_minus;
            let grow = w.exp();
            let s = a + scale * (grow - 1.0);
            let v = f(s) * scale * grow / (one_minus * one_minus);
            if v.is_finite() {
                v
            } else if s.is_infinite() || w.is_infinite() {
                0.0
            } else {
                v
            }
        },
        0.0,
        1.0,
        rel_tol,
        abs_tol,
    )
}

/// `∫_0^{u} g(v) dv / v` through `s = −ln v`, which turns the singular
/// weight into `ds` over `[−ln u, ∞)`.
///
/// With `v = T* − τ` this is `∫_t^{T*} g dτ / (T* − τ)`; `g` takes the
/// distance to `T*` so that no precision is lost forming `T* − τ`.
pub fn integrate_log_singular<F: Fn(f64) -> f64>(
    g: F,
    u: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<QuadResult, QuadError> {
    integrate_to_infinity(
        |s| {
            let v = (-s).exp();
            if v > 0.0 {
                g(v)
            } else {
                0.0
            }
        },
        -u.ln(),
        rel_tol,
        abs_tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| x.powi(5) - 2.0 * x, 0.0, 2.0, 1e-14, 0.0).unwrap();
        assert_relative_eq!(r.value, 64.0 / 6.0 - 4.0, epsilon = 1e-13);
    }

    #[test]
    fn endpoint_square_root_singularity() {
        let r = integrate(|x| 1.0 / x.sqrt(), 0.0, 1.0, 1e-10, 0.0).unwrap();
        assert_relative_eq!(r.value, 2.0, max_relative = 1e-9);
    }

    #[test]
    fn semi_infinite_exponential_and_algebraic() {
        let r = integrate_to_infinity(|s| (-2.0 * s).exp(), 1.0, 1e-12, 0.0).unwrap();
        assert_relative_eq!(r.value, (-2.0f64).exp() / 2.0, max_relative = 1e-11);
        let r = integrate_to_infinity(|s| s.powi(-3), 2.0, 1e-12, 0.0).unwrap();
        assert_relative_eq!(r.value, 1.0 / 8.0, max_relative = 1e-11);
    }

    #[test]
    fn log_singular_weight() {
        // ∫_0^{1/4} v^{1/2} / v dv = 2 (1/4)^{1/2}
        let r = integrate_log_singular(|v| v.sqrt(), 0.25, 1e-12, 0.0).unwrap();
        assert_relative_eq!(r.value, 1.0, max_relative = 1e-11);
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        assert!(matches!(
            integrate(
                |x| if x > 0.5 { f64::NAN } else { 1.0 },
                0.0,
                1.0,
                1e-8,
                0.0
            ),
            Err(QuadError::NonFinite(_))
        ));
    }
}

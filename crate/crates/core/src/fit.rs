//! Small least-squares helpers.

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let w: Vec<f64> = vec![1.0; points.len()];
    weighted_linear_fit(points, &w)
}

/// Weighted least squares `y ≈ slope·x + intercept`, centered for stability.
pub fn weighted_linear_fit(points: &[(f64, f64)], weights: &[f64]) -> (f64, f64) {
    let sw: f64 = weights.iter().sum();
    let xm = points
        .iter()
        .zip(weights)
        .map(|(p, w)| w * p.0)
        .sum::<f64>()
        / sw;
    let ym = points
        .iter()
        .zip(weights)
        .map(|(p, w)| w * p.1)
        .sum::<f64>()
        / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((x, y), w) in points.iter().zip(weights) {
        sxx += w * (x - xm) * (x - xm);
        sxy += w * (x - xm) * (y - ym);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, ym - slope * xm)
}

/// Root-mean-square residual of a line through `points`.
pub fn rms_residual(points: &[(f64, f64)], slope: f64, intercept: f64) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let ss: f64 = points
        .iter()
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    (ss / points.len() as f64).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

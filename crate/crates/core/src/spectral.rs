//! Real diagonalization of the system matrix and its eigen-projection calculus.
//!
//! A matrix `A` with real positive spectrum is written as `A = S⁻¹ A₀ S` with
//! `A₀ = diag(Λ₁ ≤ … ≤ Λₙ)`. For every distinct eigenvalue `λⱼ` the projection
//! `R_λⱼ = S⁻¹ R̂_λⱼ S` is materialized once, since every trajectory sample
//! reuses it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on `‖S‖·‖S⁻¹‖` above which a decomposition is rejected.
pub const DEFAULT_CONDITION_CAP: f64 = 1e8;

/// Relative gap below which eigenvalues are merged into one distinct value.
pub const CLUSTER_GAP: f64 = 1e-8;

/// Imaginary parts above `IMAG_TOL·‖A‖` mean the spectrum is not real.
pub const IMAG_TOL: f64 = 1e-10;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SpectralError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is empty or has non-finite entries")]
    InvalidMatrix,
    #[error("matrix is not diagonalizable over the reals: {reason}")]
    NonDiagonalizable { reason: String },
    #[error("eigenvalue {value} is not positive")]
    NonPositiveSpectrum { value: f64 },
    #[error("{value} is not an eigenvalue of the decomposed matrix")]
    UnknownEigenvalue { value: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralOptions {
    /// Tolerance for the diagonalization and projection identities.
    pub tol: f64,
    /// Reject eigenbases whose condition number exceeds this.
    pub condition_cap: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            condition_cap: DEFAULT_CONDITION_CAP,
        }
    }
}

/// Diagonalization data of `A`. Immutable after construction.
#[derive(Debug, Clone)]
pub struct SpectralData {
    matrix: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    distinct: Vec<f64>,
    /// Index ranges into `eigenvalues` for each distinct value.
    clusters: Vec<std::ops::Range<usize>>,
    conjugator: DMatrix<f64>,
    conjugator_inverse: DMatrix<f64>,
    diagonal: DMatrix<f64>,
    projections: Vec<DMatrix<f64>>,
    symmetric: bool,
    norm_s: f64,
    norm_s_inv: f64,
    tol: f64,
}

/// Decompose `a` with default options and the given identity tolerance.
pub fn decompose(a: &DMatrix<f64>, tol: f64) -> Result<SpectralData, SpectralError> {
    decompose_with(
        a,
        SpectralOptions {
            tol,
            ..SpectralOptions::default()
        },
    )
}

pub fn decompose_with(
    a: &DMatrix<f64>,
    opts: SpectralOptions,
) -> Result<SpectralData, SpectralError> {
    let (rows, cols) = a.shape();
    if rows != cols {
        return Err(SpectralError::NotSquare { rows, cols });
    }
    if rows == 0 || a.iter().any(|v| !v.is_finite()) {
        return Err(SpectralError::InvalidMatrix);
    }
    let norm_a = a.norm().max(f64::MIN_POSITIVE);
    let symmetric = (a - a.transpose()).norm() <= 1e-12 * norm_a;

    // Columns of `basis` are eigenvectors, so A = basis · diag · basis⁻¹.
    let (values, basis) = if symmetric {
        symmetric_eigenbasis(a)
    } else {
        general_eigenbasis(a, norm_a)?
    };

    if let Some(&bad) = values.iter().find(|&&v| v <= 0.0) {
        return Err(SpectralError::NonPositiveSpectrum { value: bad });
    }

    let conjugator_inverse = basis;
    let conjugator = if symmetric {
        conjugator_inverse.transpose()
    } else {
        conjugator_inverse.clone().try_inverse().ok_or_else(|| {
            SpectralError::NonDiagonalizable {
                reason: "eigenvector matrix is singular".into(),
            }
        })?
    };

    let norm_s = operator_norm(&conjugator);
    let norm_s_inv = operator_norm(&conjugator_inverse);
    let condition = norm_s * norm_s_inv;
    if !condition.is_finite() || condition > opts.condition_cap {
        return Err(SpectralError::NonDiagonalizable {
            reason: format!(
                "eigenbasis condition number {condition:.3e} exceeds cap {:.3e}",
                opts.condition_cap
            ),
        });
    }

    let (eigenvalues, distinct, clusters) = cluster(&values);
    let diagonal = DMatrix::from_diagonal(&DVector::from_vec(eigenvalues.clone()));

    let projections = clusters
        .iter()
        .map(|r| {
            let p = conjugator_inverse.columns(r.start, r.len());
            let s = conjugator.rows(r.start, r.len());
            p * s
        })
        .collect::<Vec<_>>();

    let sd = SpectralData {
        matrix: a.clone(),
        eigenvalues,
        distinct,
        clusters,
        conjugator,
        conjugator_inverse,
        diagonal,
        projections,
        symmetric,
        norm_s,
        norm_s_inv,
        tol: opts.tol,
    };

    let report = sd.identity_residuals();
    let worst = report.max_relative(norm_a);
    if worst > opts.tol {
        return Err(SpectralError::NonDiagonalizable {
            reason: format!(
                "identity residual {worst:.3e} exceeds tolerance {:.3e}",
                opts.tol
            ),
        });
    }
    Ok(sd)
}

fn symmetric_eigenbasis(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = a.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut basis = DMatrix::zeros(a.nrows(), a.ncols());
    for (k, &i) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        orient(&mut col);
        col /= col.norm();
        basis.set_column(k, &col);
    }
    (values, basis)
}

fn general_eigenbasis(
    a: &DMatrix<f64>,
    norm_a: f64,
) -> Result<(Vec<f64>, DMatrix<f64>), SpectralError> {
    let n = a.nrows();
    let complex = a.clone().complex_eigenvalues();
    let mut reals = Vec::with_capacity(n);
    for z in complex.iter() {
        if z.im.abs() > IMAG_TOL * norm_a {
            return Err(SpectralError::NonDiagonalizable {
                reason: format!("complex eigenvalue {}+{}i", z.re, z.im),
            });
        }
        reals.push(z.re);
    }
    reals.sort_by(f64::total_cmp);
    let (_, distinct, clusters) = cluster(&reals);

    let mut basis = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (lambda, range) in distinct.iter().zip(&clusters) {
        let m = range.len();
        let shifted = a - DMatrix::identity(n, n) * *lambda;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
        let largest_null = svd.singular_values[idx[m - 1]];
        if largest_null > 1e-6 * norm_a {
            return Err(SpectralError::NonDiagonalizable {
                reason: format!(
                    "eigenvalue {lambda} has geometric multiplicity below its algebraic multiplicity {m}"
                ),
            });
        }
        for (k, &i) in idx.iter().take(m).enumerate() {
            let mut col = v_t.row(i).transpose();
            if m == 1 {
                orient(&mut col);
                let scale = col.amax();
                col /= scale;
            }
            basis.set_column(range.start + k, &col);
            values.push(*lambda);
        }
    }

    // Refine the eigenvalues from the similarity transform itself.
    if let Some(inv) = basis.clone().try_inverse() {
        let d = &inv * a * &basis;
        for (i, v) in values.iter_mut().enumerate() {
            *v = d[(i, i)];
        }
    }
    Ok((values, basis))
}

/// Flip the sign so that the largest-magnitude component is positive.
fn orient(v: &mut DVector<f64>) {
    let imax = v.iamax();
    if v[imax] < 0.0 {
        v.neg_mut();
    }
}

/// Merge eigenvalues closer than `CLUSTER_GAP·max|Λ|`; returns the
/// per-index values (cluster means), the distinct values and index ranges.
fn cluster(sorted: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<std::ops::Range<usize>>) {
    let scale = sorted.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let gap = CLUSTER_GAP * scale;
    let mut ranges = Vec::new();
    let mut start = 0;
    for i in 1..=sorted.len() {
        if i == sorted.len() || sorted[i] - sorted[i - 1] > gap {
            ranges.push(start..i);
            start = i;
        }
    }
    let distinct: Vec<f64> = ranges
        .iter()
        .map(|r| sorted[r.clone()].iter().sum::<f64>() / r.len() as f64)
        .collect();
    let mut values = vec![0.0; sorted.len()];
    for (r, &d) in ranges.iter().zip(&distinct) {
        for v in &mut values[r.clone()] {
            *v = d;
        }
    }
    (values, distinct, ranges)
}

/// Spectral (operator 2-) norm.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Residuals of the diagonalization and projection identities.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IdentityResiduals {
    /// ‖S A S⁻¹ − A₀‖
    pub similarity: f64,
    /// ‖Σ R − I‖
    pub partition: f64,
    /// max over i, j of ‖RᵢRⱼ − δᵢⱼRⱼ‖
    pub orthogonality: f64,
    /// max over j of ‖A Rⱼ − λⱼ Rⱼ‖ and ‖Rⱼ A − λⱼ Rⱼ‖
    pub eigen: f64,
}

impl IdentityResiduals {
    /// Largest residual with the `A`-scaled ones divided by `norm_a`.
    pub fn max_relative(&self, norm_a: f64) -> f64 {
        (self.similarity / norm_a)
            .max(self.partition)
            .max(self.orthogonality)
            .max(self.eigen / norm_a)
    }
}

impl SpectralData {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Λ₁ ≤ … ≤ Λₙ with multiplicity.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// λ₁ < … < λ_d.
    pub fn distinct_eigenvalues(&self) -> &[f64] {
        &self.distinct
    }

    pub fn lowest(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn highest(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }

    /// The conjugator `S` with `A = S⁻¹ A₀ S`.
    pub fn conjugator(&self) -> &DMatrix<f64> {
        &self.conjugator
    }

    pub fn conjugator_inverse(&self) -> &DMatrix<f64> {
        &self.conjugator_inverse
    }

    /// `A₀ = diag(Λ₁, …, Λₙ)`.
    pub fn diagonal(&self) -> &DMatrix<f64> {
        &self.diagonal
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn norm_s(&self) -> f64 {
        self.norm_s
    }

    pub fn norm_s_inv(&self) -> f64 {
        self.norm_s_inv
    }

    pub fn condition(&self) -> f64 {
        self.norm_s * self.norm_s_inv
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Index of `lambda` among the distinct eigenvalues.
    pub fn eigen_index(&self, lambda: f64) -> Result<usize, SpectralError> {
        let gap = CLUSTER_GAP * self.highest().abs().max(1.0);
        self.distinct
            .iter()
            .position(|&l| (l - lambda).abs() <= gap)
            .ok_or(SpectralError::UnknownEigenvalue { value: lambda })
    }

    /// The projection matrix `R_λ`.
    pub fn projection(&self, lambda: f64) -> Result<&DMatrix<f64>, SpectralError> {
        Ok(&self.projections[self.eigen_index(lambda)?])
    }

    /// `R̂_λ = S R_λ S⁻¹`, the diagonal projection in conjugated coordinates.
    pub fn diagonal_projection(&self, lambda: f64) -> Result<DMatrix<f64>, SpectralError> {
        let j = self.eigen_index(lambda)?;
        let mut d = DVector::zeros(self.dim());
        for i in self.clusters[j].clone() {
            d[i] = 1.0;
        }
        Ok(DMatrix::from_diagonal(&d))
    }

    /// Returns `R_λ x`.
    pub fn project(&self, lambda: f64, x: &DVector<f64>) -> Result<DVector<f64>, SpectralError> {
        self.check_dim(x)?;
        Ok(self.projection(lambda)? * x)
    }

    /// Returns `S x`.
    pub fn to_conjugate(&self, x: &DVector<f64>) -> Result<DVector<f64>, SpectralError> {
        self.check_dim(x)?;
        Ok(&self.conjugator * x)
    }

    /// Returns `S⁻¹ z`.
    pub fn from_conjugate(&self, z: &DVector<f64>) -> Result<DVector<f64>, SpectralError> {
        self.check_dim(z)?;
        Ok(&self.conjugator_inverse * z)
    }

    /// Smallest distance from `lambda` to the other distinct eigenvalues;
    /// `None` when the spectrum has a single distinct value.
    pub fn gap(&self, lambda: f64) -> Result<Option<f64>, SpectralError> {
        let j = self.eigen_index(lambda)?;
        Ok(self
            .distinct
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != j)
            .map(|(_, &l)| (l - self.distinct[j]).abs())
            .min_by(f64::total_cmp))
    }

    pub fn identity_residuals(&self) -> IdentityResiduals {
        let n = self.dim();
        let a = &self.matrix;
        let similarity = (&self.conjugator * a * &self.conjugator_inverse - &self.diagonal).norm();
        let mut sum = DMatrix::zeros(n, n);
        let mut orthogonality = 0.0_f64;
        let mut eigen = 0.0_f64;
        for (j, (rj, &lj)) in self.projections.iter().zip(&self.distinct).enumerate() {
            sum += rj;
            for (i, ri) in self.projections.iter().enumerate() {
                let target = if i == j {
                    rj.clone()
                } else {
                    DMatrix::zeros(n, n)
                };
                orthogonality = orthogonality.max((ri * rj - target).norm());
            }
            eigen = eigen
                .max((a * rj - rj * lj).norm())
                .max((rj * a - rj * lj).norm());
        }
        IdentityResiduals {
            similarity,
            partition: (sum - DMatrix::identity(n, n)).norm(),
            orthogonality,
            eigen,
        }
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<(), SpectralError> {
        if x.len() != self.dim() {
            return Err(SpectralError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn to_record(&self) -> SpectralRecord {
        SpectralRecord {
            dim: self.dim(),
            eigenvalues: self.eigenvalues.clone(),
            distinct_eigenvalues: self.distinct.clone(),
            conjugator: rows_of(&self.conjugator),
            conjugator_inverse: rows_of(&self.conjugator_inverse),
            is_symmetric: self.symmetric,
            norm_s: self.norm_s,
            norm_s_inv: self.norm_s_inv,
            condition: self.condition(),
        }
    }
}

/// JSON view of a decomposition, embedded in reports.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SpectralRecord {
    pub dim: usize,
    pub eigenvalues: Vec<f64>,
    pub distinct_eigenvalues: Vec<f64>,
    pub conjugator: Vec<Vec<f64>>,
    pub conjugator_inverse: Vec<Vec<f64>>,
    pub is_symmetric: bool,
    pub norm_s: f64,
    pub norm_s_inv: f64,
    pub condition: f64,
}

/// Row-major nested vectors.
pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Builds a matrix from row-major nested vectors.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, SpectralError> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if let Some(r) = rows.iter().find(|r| r.len() != nc) {
        return Err(SpectralError::DimensionMismatch {
            expected: nc,
            found: r.len(),
        });
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        let v: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        matrix_from_rows(&v).unwrap()
    }

    #[test]
    fn diagonal_matrix_is_its_own_eigenbasis() {
        let sd = decompose(&m(&[&[1.0, 0.0], &[0.0, 2.0]]), 1e-10).unwrap();
        assert_eq!(sd.distinct_eigenvalues(), &[1.0, 2.0]);
        assert!(sd.is_symmetric());
        assert_relative_eq!(sd.conjugator(), &DMatrix::identity(2, 2), epsilon = 1e-14);
        assert_relative_eq!(sd.projection(1.0).unwrap(), &m(&[&[1.0, 0.0], &[0.0, 0.0]]));
        assert_relative_eq!(sd.projection(2.0).unwrap(), &m(&[&[0.0, 0.0], &[0.0, 1.0]]));
    }

    #[test]
    fn identity_has_a_single_projection() {
        let sd = decompose(&DMatrix::identity(3, 3), 1e-10).unwrap();
        assert_eq!(sd.distinct_eigenvalues(), &[1.0]);
        assert_relative_eq!(
            sd.projection(1.0).unwrap(),
            &DMatrix::identity(3, 3),
            epsilon = 1e-14
        );
        assert_eq!(sd.gap(1.0).unwrap(), None);
    }

    #[test]
    fn upper_triangular_projections_match_hand_computation() {
        let a = m(&[&[2.0, 1.0], &[0.0, 3.0]]);
        let sd = decompose(&a, 1e-10).unwrap();
        assert!(!sd.is_symmetric());
        assert_relative_eq!(sd.distinct_eigenvalues()[0], 2.0, epsilon = 1e-13);
        assert_relative_eq!(sd.distinct_eigenvalues()[1], 3.0, epsilon = 1e-13);
        let r2 = m(&[&[1.0, -1.0], &[0.0, 0.0]]);
        let r3 = m(&[&[0.0, 1.0], &[0.0, 1.0]]);
        assert_relative_eq!(sd.projection(2.0).unwrap(), &r2, epsilon = 1e-12);
        assert_relative_eq!(sd.projection(3.0).unwrap(), &r3, epsilon = 1e-12);
        // hand-checked identities
        assert_relative_eq!(&r2 + &r3, DMatrix::identity(2, 2));
        assert_relative_eq!(&a * &r3, &r3 * 3.0);
        assert_relative_eq!(&r2 * &r3, DMatrix::zeros(2, 2));
        assert_relative_eq!(
            sd.conjugator(),
            &m(&[&[1.0, -1.0], &[0.0, 1.0]]),
            epsilon = 1e-12
        );
    }

    #[test]
    fn project_examples() {
        let x = DVector::from_vec(vec![3.0, 4.0]);
        let sd = decompose(
            &DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])),
            1e-10,
        )
        .unwrap();
        assert_relative_eq!(
            sd.project(1.0, &x).unwrap(),
            DVector::from_vec(vec![3.0, 0.0])
        );
        let sd = decompose(&DMatrix::identity(2, 2), 1e-10).unwrap();
        assert_relative_eq!(sd.project(1.0, &x).unwrap(), x, epsilon = 1e-14);
        let sd = decompose(&m(&[&[2.0, 1.0], &[0.0, 3.0]]), 1e-10).unwrap();
        let p = sd.project(3.0, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_relative_eq!(p, DVector::zeros(2), epsilon = 1e-12);
        assert!(matches!(
            sd.project(5.0, &x),
            Err(SpectralError::UnknownEigenvalue { .. })
        ));
    }

    #[test]
    fn conjugation_examples() {
        let sd = decompose(
            &DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])),
            1e-10,
        )
        .unwrap();
        let ones = DVector::from_vec(vec![1.0, 1.0]);
        assert_relative_eq!(sd.to_conjugate(&ones).unwrap(), ones);
        let sd = decompose(&m(&[&[2.0, 1.0], &[0.0, 3.0]]), 1e-10).unwrap();
        let z = sd.to_conjugate(&ones).unwrap();
        assert_relative_eq!(z, DVector::from_vec(vec![0.0, 1.0]), epsilon = 1e-12);
        assert_relative_eq!(sd.from_conjugate(&z).unwrap(), ones, epsilon = 1e-12);
        assert!(matches!(
            sd.to_conjugate(&DVector::zeros(3)),
            Err(SpectralError::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
    }

    #[test]
    fn rejects_defective_and_complex_and_nonpositive() {
        let jordan = m(&[&[2.0, 1.0], &[0.0, 2.0]]);
        assert!(matches!(
            decompose(&jordan, 1e-8),
            Err(SpectralError::NonDiagonalizable { .. })
        ));
        let rotation = m(&[&[0.0, -1.0], &[1.0, 0.0]]);
        assert!(matches!(
            decompose(&rotation, 1e-8),
            Err(SpectralError::NonDiagonalizable { .. })
        ));
        let indefinite = m(&[&[1.0, 0.0], &[0.0, -1.0]]);
        assert!(matches!(
            decompose(&indefinite, 1e-8),
            Err(SpectralError::NonPositiveSpectrum { .. })
        ));
        assert!(matches!(
            decompose(&DMatrix::zeros(2, 3), 1e-8),
            Err(SpectralError::NotSquare { .. })
        ));
    }

    #[test]
    fn close_eigenvalues_are_merged() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0 + 1e-12, 2.0]));
        let sd = decompose(&a, 1e-8).unwrap();
        assert_eq!(sd.distinct_eigenvalues().len(), 2);
        assert_eq!(
            sd.gap(2.0).unwrap(),
            Some(2.0 - sd.distinct_eigenvalues()[0])
        );
    }

    #[test]
    fn condition_cap_is_enforced() {
        // eigenvectors (1,0) and (1, 1e-9) are nearly parallel
        let a = m(&[&[1.0, 1e9], &[0.0, 2.0]]);
        let opts = SpectralOptions {
            tol: 1e-6,
            condition_cap: 1e3,
        };
        assert!(matches!(
            decompose_with(&a, opts),
            Err(SpectralError::NonDiagonalizable { .. })
        ));
    }

    #[test]
    fn record_round_trips_through_json() {
        let sd = decompose(&m(&[&[2.0, 1.0], &[0.0, 3.0]]), 1e-10).unwrap();
        let rec = sd.to_record();
        let s = serde_json::to_string(&rec).unwrap();
        let back: SpectralRecord = serde_json::from_str(&s).unwrap();
        assert_eq!(rec, back);
    }
}

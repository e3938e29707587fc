//! Population and sample moment matrices.
//!
//! Population side: `Γ_C = Λ Λᵀ`, `Γ_y = Γ_C + Γ_e` (factors have identity
//! variance and are independent of the idiosyncratic component). Sample side:
//! plain second-moment matrices `T⁻¹ XᵀX` without demeaning — the modeled
//! process is zero mean, and demeaning is an ingestion-time option that does
//! not belong in the estimator.

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MomentsError {
    #[error("dimension mismatch: {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("gamma_e is not symmetric (max |A - A'| = {max_asymmetry:.3e})")]
    AsymmetricGammaE { max_asymmetry: f64 },
    #[error("input data is empty")]
    EmptyData,
}

/// The population covariance split `Γ_y = Γ_C + Γ_e` for one cross-section
/// size; the identity holds entrywise by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePair {
    /// Observation covariance `Γ_y = Λ Λᵀ + Γ_e`.
    pub gamma_y: Array2<f64>,
    /// Common-component covariance `Γ_C = Λ Λᵀ`, rank at most `r`.
    pub gamma_c: Array2<f64>,
    /// Idiosyncratic covariance.
    pub gamma_e: Array2<f64>,
}

impl CovariancePair {
    pub fn dim(&self) -> usize {
        self.gamma_y.nrows()
    }
}

fn symmetrize_in_place(m: &mut Array2<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn max_asymmetry(a: &ArrayView2<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Population covariances implied by loadings with unit-variance factors:
/// `Γ_C = Λ Λᵀ` and `Γ_y = Γ_C + Γ_e`.
pub fn population_covariances(
    loadings: &ArrayView2<f64>,
    gamma_e: &ArrayView2<f64>,
) -> Result<CovariancePair, MomentsError> {
    let n = loadings.nrows();
    if gamma_e.nrows() != n || gamma_e.ncols() != n {
        return Err(MomentsError::DimensionMismatch {
            context: "gamma_e vs loadings rows",
            expected: n,
            actual: gamma_e.nrows().max(gamma_e.ncols()),
        });
    }
    let asym = max_asymmetry(gamma_e);
    if asym > 1e-8 {
        return Err(MomentsError::AsymmetricGammaE {
            max_asymmetry: asym,
        });
    }
    let mut gamma_c = loadings.dot(&loadings.t());
    symmetrize_in_place(&mut gamma_c);
    let gamma_y = &gamma_c + gamma_e;
    Ok(CovariancePair {
        gamma_y,
        gamma_c,
        gamma_e: gamma_e.to_owned(),
    })
}

/// Loadings gram `Γ_Λ^n = Λᵀ Λ / n`, symmetric positive semidefinite.
pub fn loadings_gram(loadings: &ArrayView2<f64>) -> Array2<f64> {
    let n = loadings.nrows().max(1);
    let mut gram = loadings.t().dot(loadings) / n as f64;
    symmetrize_in_place(&mut gram);
    gram
}

/// True iff every off-diagonal entry is at most `tol` in modulus.
pub fn is_gram_diagonal(gram: &ArrayView2<f64>, tol: f64) -> bool {
    for ((i, j), &v) in gram.indexed_iter() {
        if i != j && v.abs() > tol {
            return false;
        }
    }
    true
}

/// Second-moment matrix `T⁻¹ XᵀX` of a `T x n` data block. No demeaning.
pub fn sample_covariance(data: &ArrayView2<f64>) -> Result<Array2<f64>, MomentsError> {
    let t = data.nrows();
    if t == 0 || data.ncols() == 0 {
        return Err(MomentsError::EmptyData);
    }
    let mut cov = data.t().dot(data) / t as f64;
    symmetrize_in_place(&mut cov);
    Ok(cov)
}

/// Cross moment `T⁻¹ AᵀB` of two blocks observed over the same `T` periods.
pub fn sample_cross_moment(
    a: &ArrayView2<f64>,
    b: &ArrayView2<f64>,
) -> Result<Array2<f64>, MomentsError> {
    if a.nrows() != b.nrows() {
        return Err(MomentsError::DimensionMismatch {
            context: "sample lengths",
            expected: a.nrows(),
            actual: b.nrows(),
        });
    }
    if a.nrows() == 0 {
        return Err(MomentsError::EmptyData);
    }
    Ok(a.t().dot(b) / a.nrows() as f64)
}

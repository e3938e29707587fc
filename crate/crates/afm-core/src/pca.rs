//! Normalized principal components, PC loadings, the population limit
//! objects they converge to, and the factor-space rotation matrix.
//!
//! The NPC of an `n`-vector `x` under an eigensystem of its covariance is
//! `M^{-1/2} P x`: principal components scaled to unit variance. Its loadings
//! counterpart is `Pᵀ M^{1/2}`, whose row `i` estimates the loading of unit
//! `i`. As `n` grows both converge — the factors to `F∞ = P_Λ F_t` and the
//! loadings to `Λ_i∞ = Λ_i P_Λᵀ`, where `P_Λ` eigendecomposes the limit
//! loadings gram `Γ_Λ`.

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::dgp::{DgpError, ModelConfig};
use crate::moments::{sample_covariance, MomentsError};
use crate::spectra::{sym_eigen_full, top_r_eigs, EigenSystem, SpectraError};

#[derive(Debug, Error)]
pub enum PcaError {
    #[error("dimension mismatch: {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("eigenvalue {index} is {value:.3e}; normalized PCs need a positive spectrum")]
    NonPositiveEigenvalue { index: usize, value: f64 },
    #[error("cannot extract {r} factors from a {t} x {n} panel")]
    InvalidFactorCount { r: usize, n: usize, t: usize },
    #[error("limit gram has a repeated eigenvalue (gap {gap:.3e}); the limit objects are undefined")]
    RepeatedLimitEigenvalues { gap: f64 },
    #[error("factor gram is numerically singular (condition number {condition_number:.3e})")]
    SingularFactorGram { condition_number: f64 },
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Moments(#[from] MomentsError),
    #[error(transparent)]
    Dgp(#[from] DgpError),
}

/// Whether an estimate came from a population covariance or a sample one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateSource {
    Population,
    Sample,
}

/// Factors and loadings extracted from one eigensystem.
#[derive(Debug, Clone)]
pub struct FactorEstimate {
    /// Estimated factor path (`T x r`), unit sample variance when the
    /// eigensystem comes from the same data.
    pub factors: Array2<f64>,
    /// Estimated loadings (`n x r`), row `i` is `P^i M^{1/2}`.
    pub loadings: Array2<f64>,
    /// The eigensystem both were derived from.
    pub eigen: EigenSystem,
    pub source: EstimateSource,
}

impl FactorEstimate {
    /// Rank-`r` reconstruction `F̂ Λ̂ᵀ` of the panel.
    pub fn reconstruction(&self) -> Array2<f64> {
        self.factors.dot(&self.loadings.t())
    }
}

/// The limit objects of the NPC sequence for a known limit gram.
#[derive(Debug, Clone)]
pub struct LimitObjects {
    /// Orthonormal rows eigendecomposing `Γ_Λ`, sign-fixed (`r x r`).
    pub p_lambda: Array2<f64>,
    /// Eigenvalues of `Γ_Λ`, descending.
    pub d_lambda: Vec<f64>,
    /// Limit factor path `F P_Λᵀ` (`T x r`).
    pub f_infinity: Array2<f64>,
    /// Limit loadings `Λ P_Λᵀ` (`n x r`).
    pub lambda_infinity: Array2<f64>,
}

/// Normalized principal components `M^{-1/2} P x_t` of every row of `data`.
pub fn normalized_pcs(
    eigen: &EigenSystem,
    data: &ArrayView2<f64>,
) -> Result<Array2<f64>, PcaError> {
    if eigen.dimension() != data.ncols() {
        return Err(PcaError::DimensionMismatch {
            context: "eigensystem dimension vs data columns",
            expected: eigen.dimension(),
            actual: data.ncols(),
        });
    }
    for (j, &v) in eigen.values().iter().enumerate() {
        if v <= 0.0 {
            return Err(PcaError::NonPositiveEigenvalue { index: j, value: v });
        }
    }
    let mut factors = data.dot(&eigen.vectors().t());
    for (j, &v) in eigen.values().iter().enumerate() {
        let scale = 1.0 / v.sqrt();
        for x in factors.column_mut(j).iter_mut() {
            *x *= scale;
        }
    }
    Ok(factors)
}

/// PC loadings `Pᵀ M^{1/2}`: row `i` is the loading estimate for unit `i`.
pub fn pc_loadings(eigen: &EigenSystem) -> Result<Array2<f64>, PcaError> {
    let r = eigen.order();
    let n = eigen.dimension();
    for (j, &v) in eigen.values().iter().enumerate() {
        if v < 0.0 {
            return Err(PcaError::NonPositiveEigenvalue { index: j, value: v });
        }
    }
    let mut loadings = Array2::zeros((n, r));
    for j in 0..r {
        let scale = eigen.values()[j].sqrt();
        for i in 0..n {
            loadings[(i, j)] = scale * eigen.vectors()[(j, i)];
        }
    }
    Ok(loadings)
}

/// Limit objects for the configured DGP, whose limit gram is
/// `Γ_Λ = diag(w_j²/3)` by construction.
pub fn limit_objects(
    config: &ModelConfig,
    loadings: &ArrayView2<f64>,
    factors: &ArrayView2<f64>,
) -> Result<LimitObjects, PcaError> {
    config.validate()?;
    let gamma_lambda = config.gamma_lambda();
    limit_objects_from_gram(&gamma_lambda.view(), loadings, factors)
}

/// Just the rotation part of the limit objects: `(P_Λ, D_Λ)` for the
/// configured DGP.
pub fn limit_rotation(config: &ModelConfig) -> Result<(Array2<f64>, Vec<f64>), PcaError> {
    config.validate()?;
    let gamma_lambda = config.gamma_lambda();
    let eigen = top_r_eigs(&gamma_lambda.view(), config.r)?;
    if eigen.is_degenerate() {
        return Err(PcaError::RepeatedLimitEigenvalues { gap: eigen.gap() });
    }
    Ok((eigen.vectors().to_owned(), eigen.values().to_vec()))
}

/// Limit objects for an arbitrary limit gram with distinct eigenvalues.
pub fn limit_objects_from_gram(
    gamma_lambda: &ArrayView2<f64>,
    loadings: &ArrayView2<f64>,
    factors: &ArrayView2<f64>,
) -> Result<LimitObjects, PcaError> {
    let r = gamma_lambda.nrows();
    if loadings.ncols() != r {
        return Err(PcaError::DimensionMismatch {
            context: "loadings columns vs gram order",
            expected: r,
            actual: loadings.ncols(),
        });
    }
    if factors.ncols() != r {
        return Err(PcaError::DimensionMismatch {
            context: "factor columns vs gram order",
            expected: r,
            actual: factors.ncols(),
        });
    }
    let eigen = top_r_eigs(gamma_lambda, r)?;
    if eigen.is_degenerate() {
        return Err(PcaError::RepeatedLimitEigenvalues { gap: eigen.gap() });
    }
    let p_lambda = eigen.vectors().to_owned();
    let d_lambda = eigen.values().to_vec();
    let f_infinity = factors.dot(&p_lambda.t());
    let lambda_infinity = loadings.dot(&p_lambda.t());
    Ok(LimitObjects {
        p_lambda,
        d_lambda,
        f_infinity,
        lambda_infinity,
    })
}

/// The normalized-principal-components estimator: eigendecompose the sample
/// covariance of the panel, read factors and loadings off the top `r`
/// eigenpairs.
pub fn estimate_from_panel(panel: &ArrayView2<f64>, r: usize) -> Result<FactorEstimate, PcaError> {
    let (t_len, n) = panel.dim();
    if r == 0 || r > n.min(t_len) {
        return Err(PcaError::InvalidFactorCount { r, n, t: t_len });
    }
    let cov = sample_covariance(panel)?;
    let eigen = top_r_eigs(&cov.view(), r)?;
    let factors = normalized_pcs(&eigen, panel)?;
    let loadings = pc_loadings(&eigen)?;
    Ok(FactorEstimate {
        factors,
        loadings,
        eigen,
        source: EstimateSource::Sample,
    })
}

/// The sample rotation `Ĥ = (T⁻¹ Σ F̂_t F_tᵀ)(T⁻¹ Σ F_t F_tᵀ)⁻¹` mapping the
/// reference factors onto the estimated ones by least squares.
pub fn rotation_h(
    estimated: &ArrayView2<f64>,
    true_factors: &ArrayView2<f64>,
) -> Result<Array2<f64>, PcaError> {
    if estimated.nrows() != true_factors.nrows() {
        return Err(PcaError::DimensionMismatch {
            context: "sample lengths",
            expected: estimated.nrows(),
            actual: true_factors.nrows(),
        });
    }
    let t = estimated.nrows();
    if t == 0 {
        return Err(PcaError::DimensionMismatch {
            context: "sample lengths",
            expected: 1,
            actual: 0,
        });
    }
    let g_hat = estimated.t().dot(true_factors) / t as f64;
    let gram = true_factors.t().dot(true_factors) / t as f64;
    let eig = sym_eigen_full(&gram.view())?;
    let mu_max = eig.values()[0];
    let mu_min = *eig.values().last().expect("nonempty spectrum");
    if !(mu_min > 1e-12 * mu_max.max(f64::MIN_POSITIVE)) {
        let condition_number = if mu_min > 0.0 {
            mu_max / mu_min
        } else {
            f64::INFINITY
        };
        return Err(PcaError::SingularFactorGram { condition_number });
    }
    let r = gram.nrows();
    let mut inv = Array2::zeros((r, r));
    for j in 0..r {
        let w = 1.0 / eig.values()[j];
        let p = eig.vectors().row(j);
        for a in 0..r {
            for b in 0..r {
                inv[(a, b)] += w * p[a] * p[b];
            }
        }
    }
    Ok(g_hat.dot(&inv))
}

/// Flip columns of `target` so each correlates nonnegatively with the same
/// column of `reference` (in-sample sign alignment; the estimator identifies
/// factors only up to sign).
pub fn align_columns_to(target: &ArrayView2<f64>, reference: &ArrayView2<f64>) -> Array2<f64> {
    assert_eq!(target.dim(), reference.dim(), "shape mismatch in sign alignment");
    let mut aligned = target.to_owned();
    for j in 0..aligned.ncols() {
        let dot: f64 = aligned
            .column(j)
            .iter()
            .zip(reference.column(j).iter())
            .map(|(a, b)| a * b)
            .sum();
        if dot < 0.0 {
            for x in aligned.column_mut(j).iter_mut() {
                *x = -*x;
            }
        }
    }
    aligned
}

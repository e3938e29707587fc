//! Approximate factor model toolkit.
//!
//! Implements the normalized-principal-components (NPC) estimator for the
//! approximate factor model `y_it = Λ_i F_t + e_it`, the population limit
//! objects the NPC sequence converges to (`F∞`, `Λ∞`, `P_Λ`, `D_Λ`), and a
//! Monte Carlo harness that measures the convergence rates of the estimator
//! on synthetic panels and fits log-log slopes against their theoretical
//! `n^{-1/2}` / `T^{-1/2}` targets.
//!
//! Modules:
//! - [`dgp`]: nested synthetic panel generation with counter-based seeding.
//! - [`moments`]: population and sample covariance matrices.
//! - [`spectra`]: symmetric eigendecomposition with a deterministic sign
//!   convention, plus first-order eigenvalue/eigenvector perturbation
//!   predictors.
//! - [`pca`]: the NPC estimator, PC loadings, limit objects, and the
//!   factor-space rotation matrix.
//! - [`diagnostics`]: rate grids, error metrics, slope fits, and pass/fail
//!   reports.

pub mod dgp;
pub mod diagnostics;
pub mod moments;
pub mod pca;
pub mod spectra;

pub use dgp::{ModelConfig, SyntheticPanel};
pub use diagnostics::{RateGrid, RateReport, TScheme, Verdict};
pub use pca::{FactorEstimate, LimitObjects};
pub use spectra::{EigenSystem, FullEigenSystem};

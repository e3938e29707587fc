//! Synthetic data generating process for the factor model
//! `y_it = Λ_i F_t + e_it`.
//!
//! Loadings are uniform on `[-w_j, w_j]` per factor column, factors are
//! i.i.d. standard normal, and the idiosyncratic component is Gaussian with
//! the Toeplitz covariance `σ² ρ^{|i-j|}` across the cross-section. This
//! family satisfies the pervasive-loadings and bounded-idiosyncratic
//! conditions with closed-form limit objects: the loadings gram converges to
//! `diag(w_j²/3)` and the top idiosyncratic eigenvalue stays below
//! `σ²(1+ρ)/(1-ρ)` for every `n`.
//!
//! Every draw comes from a counter-based stream keyed by coordinates —
//! `(seed, i, j)` for loading entries, `(seed, replicate, t)` for shocks — so
//! loading row `i` never changes as `n` grows (nested panels) and replicates
//! are independent without storing generator state.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::spectra::tridiag_smallest_eigenvalue;

#[derive(Debug, Error)]
pub enum DgpError {
    #[error("number of factors r must be at least 1")]
    ZeroFactors,
    #[error("n_max must be at least 1")]
    ZeroNMax,
    #[error("expected {r} loading half-widths, got {actual}")]
    HalfWidthCount { r: usize, actual: usize },
    #[error("loading half-widths must be positive and finite, got {value}")]
    InvalidHalfWidth { value: f64 },
    #[error("loading half-widths must be strictly decreasing so the limit gram has distinct eigenvalues")]
    HalfWidthsNotDecreasing,
    #[error("idio_rho must lie in [0, 1), got {value}")]
    InvalidRho { value: f64 },
    #[error("idio_sigma must be nonnegative and finite, got {value}")]
    InvalidSigma { value: f64 },
    #[error("cross-section size n must be at least 1")]
    ZeroN,
    #[error("sample length T must be at least 1")]
    ZeroT,
    #[error("n ({n}) exceeds n_max ({n_max})")]
    ExceedsNMax { n: usize, n_max: usize },
    #[error("panel dimensions {t} x {n} overflow")]
    DimensionOverflow { n: usize, t: usize },
}

/// Full parametrization of the synthetic DGP.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Number of factors.
    pub r: usize,
    /// Largest cross-section the loading stream may be asked for.
    pub n_max: usize,
    /// Uniform half-width per loading column, strictly decreasing.
    pub loading_half_widths: Vec<f64>,
    /// Cross-sectional correlation decay of the idiosyncratic component.
    pub idio_rho: f64,
    /// Idiosyncratic standard deviation (zero gives a noiseless panel).
    pub idio_sigma: f64,
    /// Master seed for all streams.
    pub seed: u64,
}

impl ModelConfig {
    /// The two-factor configuration used throughout the diagnostics:
    /// `Γ_Λ = diag(2, 1)`, `ρ = 0.5`, `σ = 1`, so the limit rotation is the
    /// identity and the NPC limit is the simulated factor path itself.
    pub fn canonical(seed: u64) -> Self {
        Self {
            r: 2,
            n_max: 3200,
            loading_half_widths: vec![6.0f64.sqrt(), 3.0f64.sqrt()],
            idio_rho: 0.5,
            idio_sigma: 1.0,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_n_max(mut self, n_max: usize) -> Self {
        self.n_max = n_max;
        self
    }

    pub fn validate(&self) -> Result<(), DgpError> {
        if self.r == 0 {
            return Err(DgpError::ZeroFactors);
        }
        if self.n_max == 0 {
            return Err(DgpError::ZeroNMax);
        }
        if self.loading_half_widths.len() != self.r {
            return Err(DgpError::HalfWidthCount {
                r: self.r,
                actual: self.loading_half_widths.len(),
            });
        }
        for &w in &self.loading_half_widths {
            if !(w.is_finite() && w > 0.0) {
                return Err(DgpError::InvalidHalfWidth { value: w });
            }
        }
        if self
            .loading_half_widths
            .windows(2)
            .any(|w| w[1] >= w[0])
        {
            return Err(DgpError::HalfWidthsNotDecreasing);
        }
        if !(self.idio_rho >= 0.0 && self.idio_rho < 1.0) {
            return Err(DgpError::InvalidRho {
                value: self.idio_rho,
            });
        }
        if !(self.idio_sigma.is_finite() && self.idio_sigma >= 0.0) {
            return Err(DgpError::InvalidSigma {
                value: self.idio_sigma,
            });
        }
        Ok(())
    }

    /// Limit loadings gram `Γ_Λ = diag(w_j²/3)`.
    pub fn gamma_lambda(&self) -> Array2<f64> {
        let mut g = Array2::zeros((self.r, self.r));
        for (j, &w) in self.loading_half_widths.iter().enumerate() {
            g[(j, j)] = w * w / 3.0;
        }
        g
    }

    /// The uniform-in-`n` bound `σ²(1+ρ)/(1-ρ)` on `μ₁(Γ_e^n)`.
    pub fn idio_eigenvalue_bound(&self) -> f64 {
        self.idio_sigma * self.idio_sigma * (1.0 + self.idio_rho) / (1.0 - self.idio_rho)
    }

    /// Euclidean bound on every loading row: `‖(w_1, ..., w_r)‖`.
    pub fn loading_norm_bound(&self) -> f64 {
        self.loading_half_widths
            .iter()
            .map(|w| w * w)
            .sum::<f64>()
            .sqrt()
    }
}

/// One simulated panel: `observations = factors · loadingsᵀ + idio`, along
/// with the config snapshot that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanel {
    /// Loading rows actually used (`n x r`); row `i` depends only on
    /// `(seed, i)`, never on `n`.
    pub loadings: Array2<f64>,
    /// Simulated factor path (`T x r`).
    pub factors: Array2<f64>,
    /// Idiosyncratic draw (`T x n`).
    pub idio: Array2<f64>,
    /// Observed panel (`T x n`).
    pub observations: Array2<f64>,
    pub config: ModelConfig,
}

impl SyntheticPanel {
    pub fn n(&self) -> usize {
        self.observations.ncols()
    }

    pub fn t_len(&self) -> usize {
        self.observations.nrows()
    }

    /// The common component `C = F Λᵀ`.
    pub fn common_component(&self) -> Array2<f64> {
        self.factors.dot(&self.loadings.t())
    }
}

const DOMAIN_LOADINGS: u64 = 1;
const DOMAIN_FACTORS: u64 = 2;
const DOMAIN_IDIO: u64 = 3;

/// Counter-based stream for coordinates `(a, b)` within a keyed domain.
fn stream(seed: u64, domain: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Draw the first `n` loading rows. Entry `(i, j)` is uniform on
/// `[-w_j, w_j]` from a stream keyed by `(seed, i, j)`, so the result for
/// smaller `n` is exactly the leading block of the result for larger `n`.
pub fn draw_loadings(config: &ModelConfig, n: usize) -> Result<Array2<f64>, DgpError> {
    config.validate()?;
    if n == 0 {
        return Err(DgpError::ZeroN);
    }
    if n > config.n_max {
        return Err(DgpError::ExceedsNMax {
            n,
            n_max: config.n_max,
        });
    }
    let mut loadings = Array2::zeros((n, config.r));
    for i in 0..n {
        for j in 0..config.r {
            let u: f64 = stream(config.seed, DOMAIN_LOADINGS, i as u64, j as u64).random();
            loadings[(i, j)] = (2.0 * u - 1.0) * config.loading_half_widths[j];
        }
    }
    Ok(loadings)
}

/// The population idiosyncratic covariance `(Γ_e)_{ij} = σ² ρ^{|i-j|}`.
pub fn idio_covariance(config: &ModelConfig, n: usize) -> Result<Array2<f64>, DgpError> {
    config.validate()?;
    if n == 0 {
        return Err(DgpError::ZeroN);
    }
    let s2 = config.idio_sigma * config.idio_sigma;
    let mut powers = Vec::with_capacity(n);
    let mut p = s2;
    for _ in 0..n {
        powers.push(p);
        p *= config.idio_rho;
    }
    let mut gamma = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            gamma[(i, j)] = powers[i.abs_diff(j)];
        }
    }
    Ok(gamma)
}

/// Exact top eigenvalue of `idio_covariance(config, n)`.
///
/// The inverse of the AR(1)-Toeplitz covariance is tridiagonal, so
/// `μ₁(Γ_e) = σ²(1-ρ²) / λ_min(T)` with `T` the tridiagonal matrix having
/// diagonal `(1, 1+ρ², ..., 1+ρ², 1)` and off-diagonal `-ρ`. Bisection on
/// `λ_min(T)` is O(n) per step, which keeps the Weyl checks cheap on grids
/// where a dense solve would not be.
pub fn idio_top_eigenvalue(config: &ModelConfig, n: usize) -> Result<f64, DgpError> {
    config.validate()?;
    if n == 0 {
        return Err(DgpError::ZeroN);
    }
    let s2 = config.idio_sigma * config.idio_sigma;
    if s2 == 0.0 {
        return Ok(0.0);
    }
    let rho = config.idio_rho;
    if n == 1 {
        return Ok(s2);
    }
    let mut diag = vec![1.0 + rho * rho; n];
    diag[0] = 1.0;
    diag[n - 1] = 1.0;
    let off = vec![-rho; n - 1];
    let lambda_min = tridiag_smallest_eigenvalue(&diag, &off);
    Ok(s2 * (1.0 - rho * rho) / lambda_min)
}

/// Simulate one panel. `replicate` offsets the factor and idiosyncratic
/// streams; the loadings stream depends only on the seed, so every replicate
/// shares one loadings draw.
pub fn simulate_panel(
    config: &ModelConfig,
    n: usize,
    t_len: usize,
    replicate: u64,
) -> Result<SyntheticPanel, DgpError> {
    config.validate()?;
    if t_len == 0 {
        return Err(DgpError::ZeroT);
    }
    if n
        .checked_mul(t_len)
        .and_then(|cells| cells.checked_mul(std::mem::size_of::<f64>()))
        .is_none()
    {
        return Err(DgpError::DimensionOverflow { n, t: t_len });
    }
    let loadings = draw_loadings(config, n)?;
    let r = config.r;

    let mut factors = Array2::zeros((t_len, r));
    for t in 0..t_len {
        let mut rng = stream(config.seed, DOMAIN_FACTORS, replicate, t as u64);
        for j in 0..r {
            factors[(t, j)] = StandardNormal.sample(&mut rng);
        }
    }

    // AR(1) recursion across the cross-section reproduces the Toeplitz
    // covariance sigma^2 rho^{|i-j|} exactly.
    let sigma = config.idio_sigma;
    let rho = config.idio_rho;
    let innov = sigma * (1.0 - rho * rho).sqrt();
    let mut idio = Array2::zeros((t_len, n));
    for t in 0..t_len {
        let mut rng = stream(config.seed, DOMAIN_IDIO, replicate, t as u64);
        let mut prev = 0.0;
        for i in 0..n {
            let xi: f64 = StandardNormal.sample(&mut rng);
            let e = if i == 0 {
                sigma * xi
            } else {
                rho * prev + innov * xi
            };
            idio[(t, i)] = e;
            prev = e;
        }
    }

    let mut observations = factors.dot(&loadings.t());
    observations += &idio;

    Ok(SyntheticPanel {
        loadings,
        factors,
        idio,
        observations,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::sample_covariance;
    use crate::spectra::sym_eigen_full;
    use approx::assert_abs_diff_eq;

    #[test]
    fn validation_rejects_bad_configs() {
        let mut c = ModelConfig::canonical(1);
        c.loading_half_widths = vec![1.0, 1.0];
        assert!(matches!(
            c.validate(),
            Err(DgpError::HalfWidthsNotDecreasing)
        ));
        let mut c = ModelConfig::canonical(1);
        c.idio_rho = 1.0;
        assert!(matches!(c.validate(), Err(DgpError::InvalidRho { .. })));
        let mut c = ModelConfig::canonical(1);
        c.loading_half_widths = vec![2.0, -1.0];
        assert!(matches!(
            c.validate(),
            Err(DgpError::InvalidHalfWidth { .. })
        ));
    }

    #[test]
    fn single_loading_respects_uniform_support() {
        let config = ModelConfig {
            r: 1,
            n_max: 1,
            loading_half_widths: vec![3.0f64.sqrt()],
            idio_rho: 0.0,
            idio_sigma: 1.0,
            seed: 99,
        };
        let lam = draw_loadings(&config, 1).unwrap();
        assert!(lam[(0, 0)].abs() <= 3.0f64.sqrt());
    }

    #[test]
    fn loadings_are_nested_across_n() {
        let config = ModelConfig::canonical(7);
        let small = draw_loadings(&config, 50).unwrap();
        let large = draw_loadings(&config, 200).unwrap();
        for i in 0..50 {
            for j in 0..2 {
                assert_eq!(small[(i, j)], large[(i, j)]);
            }
        }
    }

    #[test]
    fn draw_loadings_rejects_n_above_n_max() {
        let config = ModelConfig::canonical(7);
        assert!(matches!(
            draw_loadings(&config, 3201),
            Err(DgpError::ExceedsNMax { .. })
        ));
    }

    #[test]
    fn loadings_gram_converges_to_limit() {
        // law of large numbers: the gram of U[-w, w] columns has mean
        // diag(w^2/3); at n = 1e5 the deviation is far inside 0.05
        let config = ModelConfig::canonical(3).with_n_max(100_000);
        let lam = draw_loadings(&config, 100_000).unwrap();
        let gram = lam.t().dot(&lam) / 100_000.0;
        let dev = ((gram[(0, 0)] - 2.0).powi(2)
            + (gram[(1, 1)] - 1.0).powi(2)
            + 2.0 * gram[(0, 1)].powi(2))
        .sqrt();
        assert!(dev < 0.05, "gram deviation {dev}");
    }

    #[test]
    fn idio_covariance_zero_rho_is_identity() {
        let mut config = ModelConfig::canonical(1);
        config.idio_rho = 0.0;
        let gamma = idio_covariance(&config, 3).unwrap();
        assert_eq!(gamma, Array2::eye(3));
    }

    #[test]
    fn idio_covariance_two_by_two() {
        let config = ModelConfig::canonical(1);
        let gamma = idio_covariance(&config, 2).unwrap();
        assert_abs_diff_eq!(gamma[(0, 1)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(gamma[(0, 0)], 1.0, epsilon = 1e-15);
        // 2x2 eigenvalues are 1 +- rho
        let mu1 = idio_top_eigenvalue(&config, 2).unwrap();
        assert_abs_diff_eq!(mu1, 1.5, epsilon = 1e-10);
    }

    #[test]
    fn idio_top_eigenvalue_matches_dense_oracle() {
        let config = ModelConfig::canonical(1);
        for n in [2usize, 5, 25, 64] {
            let gamma = idio_covariance(&config, n).unwrap();
            let full = sym_eigen_full(&gamma.view()).unwrap();
            let fast = idio_top_eigenvalue(&config, n).unwrap();
            assert_abs_diff_eq!(fast, full.values()[0], epsilon = 1e-10);
        }
    }

    #[test]
    fn idio_top_eigenvalue_bounded_on_grid() {
        let config = ModelConfig::canonical(1);
        let bound = config.idio_eigenvalue_bound();
        assert_abs_diff_eq!(bound, 3.0, epsilon = 1e-15);
        for n in [100usize, 200, 400, 800, 1600, 3200] {
            let mu1 = idio_top_eigenvalue(&config, n).unwrap();
            assert!(mu1 <= bound + 1e-8, "mu1 = {mu1} at n = {n}");
            assert!(mu1 > 0.0);
        }
    }

    #[test]
    fn noiseless_panel_is_exact_low_rank() {
        let mut config = ModelConfig::canonical(5);
        config.idio_sigma = 0.0;
        let panel = simulate_panel(&config, 20, 15, 0).unwrap();
        assert!(panel.idio.iter().all(|x| *x == 0.0));
        let c = panel.common_component();
        assert_eq!(panel.observations, c);
    }

    #[test]
    fn panels_are_bitwise_reproducible() {
        let config = ModelConfig::canonical(11);
        let a = simulate_panel(&config, 37, 23, 4).unwrap();
        let b = simulate_panel(&config, 37, 23, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn replicate_moves_shocks_not_loadings() {
        let config = ModelConfig::canonical(11);
        let a = simulate_panel(&config, 16, 8, 0).unwrap();
        let b = simulate_panel(&config, 16, 8, 1).unwrap();
        assert_eq!(a.loadings, b.loadings);
        assert_ne!(a.factors, b.factors);
        assert_ne!(a.idio, b.idio);
    }

    #[test]
    fn factor_columns_have_unit_sample_variance() {
        let config = ModelConfig::canonical(2);
        let panel = simulate_panel(&config, 400, 10_000, 0).unwrap();
        let t = panel.t_len() as f64;
        for j in 0..2 {
            let col = panel.factors.column(j);
            let var: f64 = col.iter().map(|x| x * x).sum::<f64>() / t;
            assert!((0.95..=1.05).contains(&var), "var = {var}");
        }
    }

    #[test]
    fn idio_recursion_reproduces_toeplitz_covariance() {
        // sample covariance of the simulated idio block is the Monte Carlo
        // oracle for the AR(1) recursion
        let config = ModelConfig::canonical(6);
        let panel = simulate_panel(&config, 3, 200_000, 0).unwrap();
        let sample = sample_covariance(&panel.idio.view()).unwrap();
        let truth = idio_covariance(&config, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(sample[(i, j)], truth[(i, j)], epsilon = 0.02);
            }
        }
    }

    #[test]
    fn pervasiveness_holds_on_grid() {
        let config = ModelConfig::canonical(4);
        for n in [100usize, 400, 1600] {
            let lam = draw_loadings(&config, n).unwrap();
            let gram = lam.t().dot(&lam) / n as f64;
            let eig = sym_eigen_full(&gram.view()).unwrap();
            assert!(
                eig.values()[1] > 0.5,
                "mu_r(gram) = {} at n = {n}",
                eig.values()[1]
            );
        }
    }
}

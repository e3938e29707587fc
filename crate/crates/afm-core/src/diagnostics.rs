//! Monte Carlo rate harness.
//!
//! Each suite measures one family of error norms over an `(n, T)` grid,
//! averages them across replicates, fits the log-log slope against the grid
//! axis, and renders a pass/fail verdict per metric. Error metrics are rms
//! over time and replicates of Euclidean distances after per-column sign
//! alignment, matching mean-square convergence statements that identify
//! factors only up to sign.
//!
//! Replicates are independent work units and run in parallel; every cell is
//! keyed by `(config.seed, replicate)` so reports are reproducible
//! bit-for-bit regardless of thread scheduling.

use ndarray::ArrayView2;
use rayon::prelude::*;
use thiserror::Error;

use crate::dgp::{
    draw_loadings, idio_covariance, idio_top_eigenvalue, simulate_panel, DgpError, ModelConfig,
};
use crate::moments::{loadings_gram, population_covariances, sample_covariance, MomentsError};
use crate::pca::{
    align_columns_to, estimate_from_panel, limit_rotation, normalized_pcs, pc_loadings,
    rotation_h, PcaError,
};
use crate::spectra::{top_r_eigs, SpectraError};

/// Slope acceptance window around the theoretical `-1/2` rate.
pub const SLOPE_WINDOW: (f64, f64) = (-0.65, -0.35);
/// Boundedness proxy: max/min of a scaled metric over the grid.
pub const BOUNDED_RATIO_LIMIT: f64 = 5.0;
/// Plateau evidence threshold for the fixed-`T` error floor.
pub const PLATEAU_RATIO_MIN: f64 = 0.5;
/// Allowed level disagreement of the scaled NPC-coefficient error across `n`.
pub const LEVEL_AGREEMENT_FACTOR: f64 = 2.0;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("grid axis must be ascending and nonempty")]
    BadAxis,
    #[error("slope axis needs at least 4 points, got {got}")]
    TooFewAxisPoints { got: usize },
    #[error("slope axis must span at least one decade (ratio {ratio:.2})")]
    AxisSpanTooNarrow { ratio: f64 },
    #[error("replications must be at least 1")]
    ZeroReplications,
    #[error("suite {suite} requires the {expected} T scheme")]
    InvalidTScheme {
        suite: &'static str,
        expected: &'static str,
    },
    #[error("fixed T = {t} cannot support r = {r} factors")]
    TTooSmall { t: usize, r: usize },
    #[error("tracked unit index {index} must be below the smallest grid n ({n_min})")]
    UnitIndexOutOfRange { index: usize, n_min: usize },
    #[error("log-log fit needs at least 3 points, got {got}")]
    TooFewSlopePoints { got: usize },
    #[error("log-log fit requires positive coordinates, got ({x}, {y})")]
    NonPositivePoint { x: f64, y: f64 },
    #[error("log-log fit abscissae are degenerate")]
    DegenerateAbscissa,
    #[error(transparent)]
    Dgp(#[from] DgpError),
    #[error(transparent)]
    Moments(#[from] MomentsError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
}

/// How `T` varies across the grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TScheme {
    /// `T = n` at every grid point.
    Coupled,
    /// One fixed `T` for all `n`. Population-only suites ignore it.
    Fixed(usize),
    /// An explicit ascending `T` grid (the cross-section grid then supplies
    /// the fixed dimension).
    Varying(Vec<usize>),
}

/// One rate-measurement campaign: cross-section grid, time scheme,
/// replication count, and the DGP it runs against.
#[derive(Debug, Clone, PartialEq)]
pub struct RateGrid {
    pub n_values: Vec<usize>,
    pub t_scheme: TScheme,
    pub replications: usize,
    pub config: ModelConfig,
}

impl RateGrid {
    fn validate_basics(&self) -> Result<(), DiagnosticsError> {
        self.config.validate()?;
        check_axis(&self.n_values)?;
        if self.replications == 0 {
            return Err(DiagnosticsError::ZeroReplications);
        }
        for &n in &self.n_values {
            if n > self.config.n_max {
                return Err(DgpError::ExceedsNMax {
                    n,
                    n_max: self.config.n_max,
                }
                .into());
            }
        }
        Ok(())
    }
}

fn check_axis(values: &[usize]) -> Result<(), DiagnosticsError> {
    if values.is_empty() || values.windows(2).any(|w| w[1] <= w[0]) || values[0] == 0 {
        return Err(DiagnosticsError::BadAxis);
    }
    Ok(())
}

/// Slope fits need leverage: at least 4 points spanning a decade.
fn check_slope_axis(values: &[usize]) -> Result<(), DiagnosticsError> {
    check_axis(values)?;
    if values.len() < 4 {
        return Err(DiagnosticsError::TooFewAxisPoints { got: values.len() });
    }
    let ratio = *values.last().unwrap() as f64 / values[0] as f64;
    if ratio < 10.0 {
        return Err(DiagnosticsError::AxisSpanTooNarrow { ratio });
    }
    Ok(())
}

pub fn default_n_grid() -> Vec<usize> {
    vec![100, 200, 400, 800, 1600, 3200]
}

pub fn default_t_grid() -> Vec<usize> {
    vec![100, 200, 400, 800, 1600, 3200]
}

pub fn lemma1_default_grid(config: ModelConfig) -> RateGrid {
    RateGrid {
        n_values: default_n_grid(),
        t_scheme: TScheme::Fixed(0),
        replications: 1,
        config,
    }
}

pub fn theorem1_default_grid(config: ModelConfig) -> RateGrid {
    RateGrid {
        n_values: default_n_grid(),
        t_scheme: TScheme::Fixed(500),
        replications: 32,
        config,
    }
}

pub fn theorem2_default_grid(config: ModelConfig) -> RateGrid {
    RateGrid {
        n_values: default_n_grid(),
        t_scheme: TScheme::Fixed(0),
        replications: 10,
        config,
    }
}

pub fn theorem3_coupled_default_grid(config: ModelConfig) -> RateGrid {
    RateGrid {
        n_values: default_n_grid(),
        t_scheme: TScheme::Coupled,
        replications: 32,
        config,
    }
}

pub fn theorem3_floor_default_grid(config: ModelConfig) -> RateGrid {
    RateGrid {
        n_values: vec![400, 800, 1600, 3200],
        t_scheme: TScheme::Fixed(100),
        replications: 32,
        config,
    }
}

pub fn theorem3_fixed_t_default_grid(config: ModelConfig) -> RateGrid {
    RateGrid {
        n_values: default_n_grid(),
        t_scheme: TScheme::Fixed(20),
        replications: 64,
        config,
    }
}

pub fn lemma2_default_grid(config: ModelConfig) -> RateGrid {
    RateGrid {
        n_values: vec![200, 800],
        t_scheme: TScheme::Varying(default_t_grid()),
        replications: 32,
        config,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }

    fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        })
    }
}

/// Which grid axis a metric varies along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitAxis {
    N,
    T,
}

/// One measured cell: a metric at one `(n, T)` grid point, averaged over
/// replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub metric: String,
    pub n: usize,
    pub t: usize,
    pub replications: usize,
    pub mse: f64,
    pub rms: f64,
}

/// Per-metric summary: the fitted slope (when the metric is a rate), the
/// target description, and the verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricFit {
    pub metric: String,
    pub axis: FitAxis,
    pub slope: Option<f64>,
    pub stderr: Option<f64>,
    pub target: String,
    pub verdict: Verdict,
    pub detail: String,
}

/// Full output of one suite run.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub suite: String,
    pub rows: Vec<RateRow>,
    pub fits: Vec<MetricFit>,
}

impl RateReport {
    pub fn all_pass(&self) -> bool {
        self.fits.iter().all(|f| f.verdict.passed())
    }

    pub fn fit(&self, metric: &str) -> Option<&MetricFit> {
        self.fits.iter().find(|f| f.metric == metric)
    }

    pub fn rows_for(&self, metric: &str) -> Vec<&RateRow> {
        self.rows.iter().filter(|r| r.metric == metric).collect()
    }

    /// Drop every metric whose name does not start with one of `keep`.
    pub fn retain_metrics(&mut self, keep: &[String]) {
        let matches = |name: &str| keep.iter().any(|k| name.starts_with(k.as_str()));
        self.rows.retain(|r| matches(&r.metric));
        self.fits.retain(|f| matches(&f.metric));
    }

    /// CSV rendering: one line per measured cell, with the owning metric's
    /// fit columns repeated on each line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,n,T,replications,rms,mse,slope,stderr,verdict\n");
        for row in &self.rows {
            let fit = self.fit(&row.metric);
            let slope = fit
                .and_then(|f| f.slope)
                .map_or(String::new(), fmt_float);
            let stderr = fit
                .and_then(|f| f.stderr)
                .map_or(String::new(), fmt_float);
            let verdict = fit.map_or(String::new(), |f| f.verdict.to_string());
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row.metric,
                row.n,
                row.t,
                row.replications,
                fmt_float(row.rms),
                fmt_float(row.mse),
                slope,
                stderr,
                verdict
            ));
        }
        out
    }

    /// Plot data: per metric, a commented header followed by `x y` pairs
    /// (raw values, log-log friendly), metrics separated by blank lines.
    pub fn to_plot_data(&self) -> String {
        let mut out = String::new();
        for fit in &self.fits {
            let rows = self.rows_for(&fit.metric);
            if rows.is_empty() {
                continue;
            }
            out.push_str(&format!("# metric: {}\n", fit.metric));
            for row in rows {
                let x = match fit.axis {
                    FitAxis::N => row.n,
                    FitAxis::T => row.t,
                };
                out.push_str(&format!("{} {}\n", x, fmt_float(row.rms)));
            }
            out.push('\n');
        }
        out
    }
}

/// Serialize with 17 significant digits so re-ingestion is lossless.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Metric name prefixes every suite can emit; consumers validate metric
/// selections against this registry.
pub fn metric_registry() -> &'static [&'static str] {
    &[
        "lemma1_evec_sqrtn_j",
        "lemma1_eval_gap_j",
        "lemma1_m_over_n_dev",
        "theorem1_npc_y_rms",
        "theorem1_npc_c_rms",
        "theorem2_loading_err_unit",
        "theorem2_gram_gap",
        "theorem3_coupled_rms",
        "theorem3_fixed_t_rms",
        "theorem3_t_varying_rms",
        "theorem3ii_space_rms",
        "lemma2_evec_err_j",
        "lemma2_eval_over_n_err_n",
        "lemma2_kcoef_sqrtn_j",
        "lemma2_kcoef_level_j",
    ]
}

/// OLS of `log y` on `log x`. Returns `(slope, stderr)`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<(f64, f64), DiagnosticsError> {
    if points.len() < 3 {
        return Err(DiagnosticsError::TooFewSlopePoints { got: points.len() });
    }
    for &(x, y) in points {
        if !(x > 0.0 && y > 0.0) {
            return Err(DiagnosticsError::NonPositivePoint { x, y });
        }
    }
    let m = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 0.0 {
        return Err(DiagnosticsError::DegenerateAbscissa);
    }
    let sxy: f64 = lx
        .iter()
        .zip(ly.iter())
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    let slope = sxy / sxx;
    let ssr: f64 = lx
        .iter()
        .zip(ly.iter())
        .map(|(x, y)| {
            let fitted = my + slope * (x - mx);
            (y - fitted) * (y - fitted)
        })
        .sum();
    let stderr = (ssr / (m - 2.0) / sxx).max(0.0).sqrt();
    Ok((slope, stderr))
}

/// Mean over rows of the squared Euclidean distance between two paths,
/// after per-column sign alignment of `a` to `b`.
fn mean_sq_distance_aligned(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> f64 {
    let aligned = align_columns_to(a, b);
    let t = a.nrows().max(1) as f64;
    aligned
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / t
}

/// Frobenius distance of a square matrix from `diag(d)`.
fn fro_dev_from_diag(m: &ArrayView2<f64>, d: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((i, j), &v) in m.indexed_iter() {
        let want = if i == j { d[i] } else { 0.0 };
        acc += (v - want) * (v - want);
    }
    acc.sqrt()
}

/// Run `f` once per replicate in parallel; results keep replicate order so
/// downstream aggregation is schedule-independent.
fn collect_replicates<F>(reps: usize, f: F) -> Result<Vec<Vec<f64>>, DiagnosticsError>
where
    F: Fn(u64) -> Result<Vec<f64>, DiagnosticsError> + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|rep| f(rep as u64))
        .collect()
}

fn mean_over_replicates(samples: &[Vec<f64>]) -> Vec<f64> {
    let reps = samples.len();
    let width = samples.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; width];
    for sample in samples {
        for (acc, v) in mean.iter_mut().zip(sample.iter()) {
            *acc += v;
        }
    }
    for acc in &mut mean {
        *acc /= reps as f64;
    }
    mean
}

fn slope_fit(
    metric: &str,
    axis: FitAxis,
    points: &[(f64, f64)],
) -> Result<MetricFit, DiagnosticsError> {
    let target = format!("slope in [{}, {}]", SLOPE_WINDOW.0, SLOPE_WINDOW.1);
    if points.iter().all(|&(_, y)| y <= 1e-14) {
        // degenerate DGPs (noiseless panels) reach the limit exactly
        return Ok(MetricFit {
            metric: metric.to_string(),
            axis,
            slope: None,
            stderr: None,
            target,
            verdict: Verdict::Pass,
            detail: "error identically zero".to_string(),
        });
    }
    let (slope, stderr) = fit_loglog_slope(points)?;
    let ok = slope >= SLOPE_WINDOW.0 && slope <= SLOPE_WINDOW.1;
    Ok(MetricFit {
        metric: metric.to_string(),
        axis,
        slope: Some(slope),
        stderr: Some(stderr),
        target,
        verdict: Verdict::from_bool(ok),
        detail: format!("slope {slope:.4} (stderr {stderr:.4})"),
    })
}

/// Population eigenstructure of `Γ_y` vs `Γ_C` on the grid: sign-aligned
/// eigenvector distances scaled by `sqrt(n)` (bounded), eigenvalue gaps
/// (inside the Weyl sandwich `[0, μ₁(Γ_e)]` at every point), and the
/// convergence of `M(Γ_y)/n` to `D_Λ`.
pub fn lemma1_eigenstructure_check(grid: &RateGrid) -> Result<RateReport, DiagnosticsError> {
    grid.validate_basics()?;
    check_slope_axis(&grid.n_values)?;
    let config = &grid.config;
    let r = config.r;
    let d_lambda: Vec<f64> = (0..r).map(|j| config.gamma_lambda()[(j, j)]).collect();

    let mut rows = Vec::new();
    let mut evec_scaled: Vec<Vec<f64>> = vec![Vec::new(); r];
    let mut weyl_ok = true;
    let mut weyl_worst = f64::NEG_INFINITY;
    let mut m_dev_series = Vec::new();

    for &n in &grid.n_values {
        let lam = draw_loadings(config, n)?;
        let gamma_e = idio_covariance(config, n)?;
        let pair = population_covariances(&lam.view(), &gamma_e.view())?;
        let eig_y = top_r_eigs(&pair.gamma_y.view(), r)?;
        let eig_c = top_r_eigs(&pair.gamma_c.view(), r)?;
        let mu1_e = idio_top_eigenvalue(config, n)?;
        drop(pair);

        for j in 0..r {
            let py = eig_y.vectors().row(j);
            let pc = eig_c.vectors().row(j);
            let dot: f64 = py.iter().zip(pc.iter()).map(|(a, b)| a * b).sum();
            let sign = if dot >= 0.0 { 1.0 } else { -1.0 };
            let dist: f64 = py
                .iter()
                .zip(pc.iter())
                .map(|(a, b)| (a - sign * b) * (a - sign * b))
                .sum::<f64>()
                .sqrt();
            let scaled = (n as f64).sqrt() * dist;
            evec_scaled[j].push(scaled);
            rows.push(RateRow {
                metric: format!("lemma1_evec_sqrtn_j{}", j + 1),
                n,
                t: 0,
                replications: 1,
                mse: scaled * scaled,
                rms: scaled,
            });

            let gap = eig_y.values()[j] - eig_c.values()[j];
            if !(gap >= 0.0 && gap <= mu1_e) {
                weyl_ok = false;
            }
            weyl_worst = weyl_worst.max(gap - mu1_e).max(-gap);
            rows.push(RateRow {
                metric: format!("lemma1_eval_gap_j{}", j + 1),
                n,
                t: 0,
                replications: 1,
                mse: gap * gap,
                rms: gap,
            });
        }

        let m_dev = {
            let mut acc = 0.0;
            for j in 0..r {
                let dev = eig_y.values()[j] / n as f64 - d_lambda[j];
                acc += dev * dev;
            }
            acc.sqrt()
        };
        m_dev_series.push(m_dev);
        rows.push(RateRow {
            metric: "lemma1_m_over_n_dev".to_string(),
            n,
            t: 0,
            replications: 1,
            mse: m_dev * m_dev,
            rms: m_dev,
        });
    }

    let mut fits = Vec::new();
    for (j, series) in evec_scaled.iter().enumerate() {
        let max = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = series.iter().cloned().fold(f64::INFINITY, f64::min);
        let (ok, detail) = if max <= 0.0 {
            (true, "all distances zero".to_string())
        } else if min <= 0.0 {
            (false, "distance vanished at one point only".to_string())
        } else {
            let ratio = max / min;
            (
                ratio <= BOUNDED_RATIO_LIMIT,
                format!("max/min = {ratio:.3}"),
            )
        };
        fits.push(MetricFit {
            metric: format!("lemma1_evec_sqrtn_j{}", j + 1),
            axis: FitAxis::N,
            slope: None,
            stderr: None,
            target: format!("sqrt(n)-scaled distance bounded: max/min <= {BOUNDED_RATIO_LIMIT}"),
            verdict: Verdict::from_bool(ok),
            detail,
        });
    }
    for j in 0..r {
        fits.push(MetricFit {
            metric: format!("lemma1_eval_gap_j{}", j + 1),
            axis: FitAxis::N,
            slope: None,
            stderr: None,
            target: "0 <= mu_j(Gamma_y) - mu_j(Gamma_C) <= mu_1(Gamma_e) at every n".to_string(),
            verdict: Verdict::from_bool(weyl_ok),
            detail: format!("worst signed slack {weyl_worst:.3e}"),
        });
    }
    let m_ok = m_dev_series.last().unwrap() < m_dev_series.first().unwrap();
    fits.push(MetricFit {
        metric: "lemma1_m_over_n_dev".to_string(),
        axis: FitAxis::N,
        slope: None,
        stderr: None,
        target: "||M(Gamma_y)/n - D_Lambda|| decreasing from n_min to n_max".to_string(),
        verdict: Verdict::from_bool(m_ok),
        detail: format!(
            "{:.3e} -> {:.3e}",
            m_dev_series.first().unwrap(),
            m_dev_series.last().unwrap()
        ),
    });

    Ok(RateReport {
        suite: "lemma1".to_string(),
        rows,
        fits,
    })
}

/// Population NPC convergence to `F∞`: rms of `‖F^{n,y}_t - F∞_t‖` and
/// `‖F^{n,C}_t - F∞_t‖` over the replicate panels, with slope-vs-`n`
/// verdicts for both variants.
pub fn theorem1_factor_limit_rate(grid: &RateGrid) -> Result<RateReport, DiagnosticsError> {
    grid.validate_basics()?;
    check_slope_axis(&grid.n_values)?;
    let t_len = match grid.t_scheme {
        TScheme::Fixed(t) if t >= 1 => t,
        _ => {
            return Err(DiagnosticsError::InvalidTScheme {
                suite: "theorem1",
                expected: "fixed(T >= 1)",
            })
        }
    };
    let config = &grid.config;
    let r = config.r;
    let (p_lambda, _) = limit_rotation(config)?;

    let mut rows = Vec::new();
    let mut y_points = Vec::new();
    let mut c_points = Vec::new();
    for &n in &grid.n_values {
        let lam = draw_loadings(config, n)?;
        let gamma_e = idio_covariance(config, n)?;
        let pair = population_covariances(&lam.view(), &gamma_e.view())?;
        let eig_y = top_r_eigs(&pair.gamma_y.view(), r)?;
        let eig_c = top_r_eigs(&pair.gamma_c.view(), r)?;
        drop(pair);

        let samples = collect_replicates(grid.replications, |rep| {
            let panel = simulate_panel(config, n, t_len, rep)?;
            let f_inf = panel.factors.dot(&p_lambda.t());
            let npc_y = normalized_pcs(&eig_y, &panel.observations.view())?;
            let common = panel.common_component();
            let npc_c = normalized_pcs(&eig_c, &common.view())?;
            Ok(vec![
                mean_sq_distance_aligned(&npc_y.view(), &f_inf.view()),
                mean_sq_distance_aligned(&npc_c.view(), &f_inf.view()),
            ])
        })?;
        let mean = mean_over_replicates(&samples);
        y_points.push((n as f64, mean[0].sqrt()));
        c_points.push((n as f64, mean[1].sqrt()));
        rows.push(RateRow {
            metric: "theorem1_npc_y_rms".to_string(),
            n,
            t: t_len,
            replications: grid.replications,
            mse: mean[0],
            rms: mean[0].sqrt(),
        });
        rows.push(RateRow {
            metric: "theorem1_npc_c_rms".to_string(),
            n,
            t: t_len,
            replications: grid.replications,
            mse: mean[1],
            rms: mean[1].sqrt(),
        });
    }

    let fits = vec![
        slope_fit("theorem1_npc_y_rms", FitAxis::N, &y_points)?,
        slope_fit("theorem1_npc_c_rms", FitAxis::N, &c_points)?,
    ];
    Ok(RateReport {
        suite: "theorem1".to_string(),
        rows,
        fits,
    })
}

/// PC-loadings convergence to `Λ∞` for tracked units, plus the gram of the
/// limit loadings against `D_Λ`. Replicates vary the loadings seed (the only
/// randomness in this population statement).
pub fn theorem2_loadings_rate(
    grid: &RateGrid,
    unit_indices: &[usize],
) -> Result<RateReport, DiagnosticsError> {
    grid.validate_basics()?;
    check_slope_axis(&grid.n_values)?;
    let config = &grid.config;
    let r = config.r;
    let n_min = grid.n_values[0];
    if unit_indices.is_empty() {
        return Err(DiagnosticsError::UnitIndexOutOfRange {
            index: 0,
            n_min,
        });
    }
    for &i in unit_indices {
        if i >= n_min {
            return Err(DiagnosticsError::UnitIndexOutOfRange { index: i, n_min });
        }
    }
    let (p_lambda, d_lambda) = limit_rotation(config)?;

    // unit_sq[n_idx][seed][k], gram_gap[n_idx][seed]
    let mut unit_sq = Vec::new();
    let mut gram_gap = Vec::new();
    for &n in &grid.n_values {
        let gamma_e = idio_covariance(config, n)?;
        let per_seed = collect_replicates(grid.replications, |k| {
            let cfg = config.clone().with_seed(config.seed.wrapping_add(k));
            let lam = draw_loadings(&cfg, n)?;
            let pair = population_covariances(&lam.view(), &gamma_e.view())?;
            let eig_y = top_r_eigs(&pair.gamma_y.view(), r)?;
            drop(pair);
            let estimated = pc_loadings(&eig_y)?;
            let lam_inf = lam.dot(&p_lambda.t());
            let aligned = align_columns_to(&estimated.view(), &lam_inf.view());
            let mut out = Vec::with_capacity(unit_indices.len() + 1);
            for &i in unit_indices {
                let sq: f64 = (0..r)
                    .map(|j| {
                        let d = aligned[(i, j)] - lam_inf[(i, j)];
                        d * d
                    })
                    .sum();
                out.push(sq);
            }
            let gram = loadings_gram(&lam_inf.view());
            out.push(fro_dev_from_diag(&gram.view(), &d_lambda));
            Ok(out)
        })?;
        gram_gap.push(per_seed.iter().map(|v| v[unit_indices.len()]).collect::<Vec<f64>>());
        unit_sq.push(per_seed);
    }

    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for (k, &i) in unit_indices.iter().enumerate() {
        let mut points = Vec::new();
        for (n_idx, &n) in grid.n_values.iter().enumerate() {
            let mse = unit_sq[n_idx].iter().map(|v| v[k]).sum::<f64>()
                / grid.replications as f64;
            points.push((n as f64, mse.sqrt()));
            rows.push(RateRow {
                metric: format!("theorem2_loading_err_unit{}", i + 1),
                n,
                t: 0,
                replications: grid.replications,
                mse,
                rms: mse.sqrt(),
            });
        }
        fits.push(slope_fit(
            &format!("theorem2_loading_err_unit{}", i + 1),
            FitAxis::N,
            &points,
        )?);
    }

    for (n_idx, &n) in grid.n_values.iter().enumerate() {
        let mse = gram_gap[n_idx].iter().map(|g| g * g).sum::<f64>()
            / grid.replications as f64;
        rows.push(RateRow {
            metric: "theorem2_gram_gap".to_string(),
            n,
            t: 0,
            replications: grid.replications,
            mse,
            rms: mse.sqrt(),
        });
    }
    let decreased = (0..grid.replications)
        .filter(|&k| gram_gap.last().unwrap()[k] < gram_gap.first().unwrap()[k])
        .count();
    fits.push(MetricFit {
        metric: "theorem2_gram_gap".to_string(),
        axis: FitAxis::N,
        slope: None,
        stderr: None,
        target: "gram gap decreasing from n_min to n_max for a majority of seeds".to_string(),
        verdict: Verdict::from_bool(2 * decreased > grid.replications),
        detail: format!("{decreased} of {} seeds decreased", grid.replications),
    });

    Ok(RateReport {
        suite: "theorem2".to_string(),
        rows,
        fits,
    })
}

/// Sample-NPC convergence to `F∞`. Coupled grids (`T = n`) get a slope
/// verdict; fixed-`T` grids demonstrate the `T^{-1/2}` error floor (the rms
/// must stop improving in `n`); varying-`T` grids at one fixed `n` show the
/// mirrored floor.
pub fn theorem3_factor_consistency(grid: &RateGrid) -> Result<RateReport, DiagnosticsError> {
    grid.validate_basics()?;
    let config = &grid.config;
    let r = config.r;
    let (p_lambda, _) = limit_rotation(config)?;

    let run_cell = |n: usize, t_len: usize| -> Result<f64, DiagnosticsError> {
        let samples = collect_replicates(grid.replications, |rep| {
            let panel = simulate_panel(config, n, t_len, rep)?;
            let est = estimate_from_panel(&panel.observations.view(), r)?;
            let f_inf = panel.factors.dot(&p_lambda.t());
            Ok(vec![mean_sq_distance_aligned(
                &est.factors.view(),
                &f_inf.view(),
            )])
        })?;
        Ok(mean_over_replicates(&samples)[0])
    };

    let mut rows = Vec::new();
    let mut fits = Vec::new();
    match &grid.t_scheme {
        TScheme::Coupled => {
            check_slope_axis(&grid.n_values)?;
            let mut points = Vec::new();
            for &n in &grid.n_values {
                let mse = run_cell(n, n)?;
                points.push((n as f64, mse.sqrt()));
                rows.push(RateRow {
                    metric: "theorem3_coupled_rms".to_string(),
                    n,
                    t: n,
                    replications: grid.replications,
                    mse,
                    rms: mse.sqrt(),
                });
            }
            fits.push(slope_fit("theorem3_coupled_rms", FitAxis::N, &points)?);
        }
        TScheme::Fixed(t0) => {
            let t0 = *t0;
            if t0 < r.max(1) {
                return Err(DiagnosticsError::TTooSmall { t: t0, r });
            }
            let mut series = Vec::new();
            for &n in &grid.n_values {
                let mse = run_cell(n, t0)?;
                series.push(mse.sqrt());
                rows.push(RateRow {
                    metric: "theorem3_fixed_t_rms".to_string(),
                    n,
                    t: t0,
                    replications: grid.replications,
                    mse,
                    rms: mse.sqrt(),
                });
            }
            let first = *series.first().unwrap();
            let last = *series.last().unwrap();
            let (ok, detail) = if first <= 0.0 {
                (true, "error identically zero".to_string())
            } else {
                let ratio = last / first;
                (
                    ratio >= PLATEAU_RATIO_MIN,
                    format!("rms({}) / rms({}) = {ratio:.3}", grid.n_values.last().unwrap(), grid.n_values[0]),
                )
            };
            fits.push(MetricFit {
                metric: "theorem3_fixed_t_rms".to_string(),
                axis: FitAxis::N,
                slope: None,
                stderr: None,
                target: format!(
                    "T^(-1/2) floor: rms(n_max)/rms(n_min) >= {PLATEAU_RATIO_MIN}"
                ),
                verdict: Verdict::from_bool(ok),
                detail,
            });
        }
        TScheme::Varying(ts) => {
            check_axis(ts)?;
            if grid.n_values.len() != 1 {
                return Err(DiagnosticsError::InvalidTScheme {
                    suite: "theorem3",
                    expected: "a single fixed n with varying T",
                });
            }
            let n = grid.n_values[0];
            let mut series = Vec::new();
            for &t_len in ts {
                let mse = run_cell(n, t_len)?;
                series.push(mse.sqrt());
                rows.push(RateRow {
                    metric: "theorem3_t_varying_rms".to_string(),
                    n,
                    t: t_len,
                    replications: grid.replications,
                    mse,
                    rms: mse.sqrt(),
                });
            }
            let first = *series.first().unwrap();
            let last = *series.last().unwrap();
            let ok = first <= 0.0 || last < first;
            fits.push(MetricFit {
                metric: "theorem3_t_varying_rms".to_string(),
                axis: FitAxis::T,
                slope: None,
                stderr: None,
                target: "rms decreasing in T toward the n^(-1/2) floor".to_string(),
                verdict: Verdict::from_bool(ok),
                detail: format!("rms {first:.4e} -> {last:.4e}"),
            });
        }
    }

    Ok(RateReport {
        suite: "theorem3".to_string(),
        rows,
        fits,
    })
}

/// Factor-space consistency at finite `T`: rms of `‖F̂_t - Ĥ_n F_t‖` with
/// `Ĥ_n` re-estimated per replicate, slope vs `n` despite `T` never growing.
pub fn theorem3_factor_space_fixed_t(grid: &RateGrid) -> Result<RateReport, DiagnosticsError> {
    grid.validate_basics()?;
    check_slope_axis(&grid.n_values)?;
    let config = &grid.config;
    let r = config.r;
    let t0 = match grid.t_scheme {
        TScheme::Fixed(t) if t >= 1 => t,
        _ => {
            return Err(DiagnosticsError::InvalidTScheme {
                suite: "theorem3-fixedT",
                expected: "fixed(T0)",
            })
        }
    };
    if t0 < r {
        return Err(DiagnosticsError::TTooSmall { t: t0, r });
    }
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for &n in &grid.n_values {
        let samples = collect_replicates(grid.replications, |rep| {
            let panel = simulate_panel(config, n, t0, rep)?;
            let est = estimate_from_panel(&panel.observations.view(), r)?;
            let h = rotation_h(&est.factors.view(), &panel.factors.view())?;
            let mapped = panel.factors.dot(&h.t());
            let t_f = t0 as f64;
            let msd = est
                .factors
                .iter()
                .zip(mapped.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / t_f;
            Ok(vec![msd])
        })?;
        let mse = mean_over_replicates(&samples)[0];
        points.push((n as f64, mse.sqrt()));
        rows.push(RateRow {
            metric: "theorem3ii_space_rms".to_string(),
            n,
            t: t0,
            replications: grid.replications,
            mse,
            rms: mse.sqrt(),
        });
    }
    let fits = vec![slope_fit("theorem3ii_space_rms", FitAxis::N, &points)?];
    Ok(RateReport {
        suite: "theorem3-fixedT".to_string(),
        rows,
        fits,
    })
}

/// Sample-vs-population eigenstructure rates in `T` at fixed `n`:
/// sign-aligned eigenvector error, eigenvalue-over-`n` error, and the
/// `sqrt(n)`-scaled NPC coefficient row error, per cross-section size in the
/// grid. The scaled coefficient levels must agree across `n`.
pub fn lemma2_sample_rates(grid: &RateGrid) -> Result<RateReport, DiagnosticsError> {
    grid.validate_basics()?;
    let config = &grid.config;
    let r = config.r;
    let ts = match &grid.t_scheme {
        TScheme::Varying(ts) => {
            check_slope_axis(ts)?;
            ts.clone()
        }
        _ => {
            return Err(DiagnosticsError::InvalidTScheme {
                suite: "lemma2",
                expected: "varying T grid",
            })
        }
    };

    let mut rows = Vec::new();
    let mut fits = Vec::new();
    // kcoef_levels[j][n_idx] = geometric mean over T of the scaled rms
    let mut kcoef_levels: Vec<Vec<f64>> = vec![Vec::new(); r];
    for &n in &grid.n_values {
        let lam = draw_loadings(config, n)?;
        let gamma_e = idio_covariance(config, n)?;
        let pair = population_covariances(&lam.view(), &gamma_e.view())?;
        let eig_pop = top_r_eigs(&pair.gamma_y.view(), r)?;
        drop(pair);

        let mut evec_points: Vec<Vec<(f64, f64)>> = vec![Vec::new(); r];
        let mut kcoef_points: Vec<Vec<(f64, f64)>> = vec![Vec::new(); r];
        let mut eval_points = Vec::new();
        for &t_len in &ts {
            let samples = collect_replicates(grid.replications, |rep| {
                let panel = simulate_panel(config, n, t_len, rep)?;
                let ghat = sample_covariance(&panel.observations.view())?;
                let eig_hat = top_r_eigs(&ghat.view(), r)?;
                let mut out = Vec::with_capacity(2 * r + 1);
                for j in 0..r {
                    let p = eig_pop.vectors().row(j);
                    let ph = eig_hat.vectors().row(j);
                    let dot: f64 = p.iter().zip(ph.iter()).map(|(a, b)| a * b).sum();
                    let sign = if dot >= 0.0 { 1.0 } else { -1.0 };
                    let sq: f64 = p
                        .iter()
                        .zip(ph.iter())
                        .map(|(a, b)| (sign * b - a) * (sign * b - a))
                        .sum();
                    out.push(sq);
                    let mu = eig_pop.values()[j];
                    let mu_hat = eig_hat.values()[j];
                    let ks = 1.0 / mu.sqrt();
                    let ks_hat = 1.0 / mu_hat.sqrt();
                    let ksq: f64 = p
                        .iter()
                        .zip(ph.iter())
                        .map(|(a, b)| {
                            let d = sign * ks_hat * b - ks * a;
                            d * d
                        })
                        .sum();
                    out.push(n as f64 * ksq);
                }
                let eval_sq: f64 = (0..r)
                    .map(|j| {
                        let d = (eig_hat.values()[j] - eig_pop.values()[j]) / n as f64;
                        d * d
                    })
                    .sum();
                out.push(eval_sq);
                Ok(out)
            })?;
            let mean = mean_over_replicates(&samples);
            for j in 0..r {
                let evec_mse = mean[2 * j];
                let kcoef_mse = mean[2 * j + 1];
                evec_points[j].push((t_len as f64, evec_mse.sqrt()));
                kcoef_points[j].push((t_len as f64, kcoef_mse.sqrt()));
                rows.push(RateRow {
                    metric: format!("lemma2_evec_err_j{}_n{n}", j + 1),
                    n,
                    t: t_len,
                    replications: grid.replications,
                    mse: evec_mse,
                    rms: evec_mse.sqrt(),
                });
                rows.push(RateRow {
                    metric: format!("lemma2_kcoef_sqrtn_j{}_n{n}", j + 1),
                    n,
                    t: t_len,
                    replications: grid.replications,
                    mse: kcoef_mse,
                    rms: kcoef_mse.sqrt(),
                });
            }
            let eval_mse = mean[2 * r];
            eval_points.push((t_len as f64, eval_mse.sqrt()));
            rows.push(RateRow {
                metric: format!("lemma2_eval_over_n_err_n{n}"),
                n,
                t: t_len,
                replications: grid.replications,
                mse: eval_mse,
                rms: eval_mse.sqrt(),
            });
        }
        for j in 0..r {
            fits.push(slope_fit(
                &format!("lemma2_evec_err_j{}_n{n}", j + 1),
                FitAxis::T,
                &evec_points[j],
            )?);
            fits.push(slope_fit(
                &format!("lemma2_kcoef_sqrtn_j{}_n{n}", j + 1),
                FitAxis::T,
                &kcoef_points[j],
            )?);
            let geo = kcoef_points[j]
                .iter()
                .map(|(_, y)| y.ln())
                .sum::<f64>()
                / kcoef_points[j].len() as f64;
            kcoef_levels[j].push(geo.exp());
        }
        fits.push(slope_fit(
            &format!("lemma2_eval_over_n_err_n{n}"),
            FitAxis::T,
            &eval_points,
        )?);
    }

    if grid.n_values.len() > 1 {
        for (j, levels) in kcoef_levels.iter().enumerate() {
            let max = levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = levels.iter().cloned().fold(f64::INFINITY, f64::min);
            let ratio = max / min;
            fits.push(MetricFit {
                metric: format!("lemma2_kcoef_level_j{}", j + 1),
                axis: FitAxis::N,
                slope: None,
                stderr: None,
                target: format!(
                    "sqrt(n)-scaled coefficient level agrees across n within factor {LEVEL_AGREEMENT_FACTOR}"
                ),
                verdict: Verdict::from_bool(ratio <= LEVEL_AGREEMENT_FACTOR),
                detail: format!("levels {levels:?}, max/min = {ratio:.3}"),
            });
        }
    }

    Ok(RateReport {
        suite: "lemma2".to_string(),
        rows,
        fits,
    })
}

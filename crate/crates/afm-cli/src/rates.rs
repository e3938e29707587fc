//! `afm rates`: run one (or all) Monte Carlo rate suites against the
//! configured DGP, write report CSV and plot data, and report the verdicts.

use std::path::Path;

use afm_core::diagnostics::{
    self, lemma1_eigenstructure_check, lemma2_sample_rates, theorem1_factor_limit_rate,
    theorem2_loadings_rate, theorem3_factor_consistency, theorem3_factor_space_fixed_t, RateGrid,
    RateReport, TScheme,
};
use anyhow::{bail, Context, Result};

use crate::config::{load_run_config, RunConfig};
use crate::panel_io::atomic_write;

pub const SUITES: &[&str] = &[
    "lemma1",
    "theorem1",
    "theorem2",
    "theorem3",
    "theorem3-fixedT",
    "lemma2",
    "all",
];

/// Runs the requested suite(s); returns true iff every verdict passed.
pub fn run(
    config_path: &Path,
    suite: &str,
    out_dir: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<bool> {
    if !SUITES.contains(&suite) {
        bail!(
            "unknown suite '{suite}'; valid suites: {}",
            SUITES.join(", ")
        );
    }
    let mut run_config = load_run_config(config_path)?;
    if let Some(seed) = seed_override {
        run_config.model.seed = seed;
    }
    let out_dir = match (out_dir, &run_config.out_dir) {
        (Some(dir), _) => dir.to_path_buf(),
        (None, Some(dir)) => dir.clone(),
        (None, None) => bail!("no output directory: pass --out or set out_dir in the config"),
    };
    let out_dir = out_dir.as_path();
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;

    let selected: Vec<&str> = if suite == "all" {
        SUITES[..SUITES.len() - 1].to_vec()
    } else {
        vec![suite]
    };

    let mut all_pass = true;
    for name in selected {
        let mut report = run_suite(name, &run_config)?;
        if let Some(metrics) = &run_config.metrics {
            report.retain_metrics(metrics);
        }
        let file_stem = name.replace('-', "_");
        atomic_write(&out_dir.join(format!("{file_stem}_report.csv")), &report.to_csv())?;
        atomic_write(&out_dir.join(format!("{file_stem}_plot.dat")), &report.to_plot_data())?;
        for fit in &report.fits {
            println!(
                "[{}] {} :: {} ({})",
                fit.verdict, fit.metric, fit.target, fit.detail
            );
        }
        if !report.all_pass() {
            all_pass = false;
        }
    }
    Ok(all_pass)
}

fn run_suite(name: &str, run_config: &RunConfig) -> Result<RateReport> {
    let config = run_config.model.clone();
    let report = match name {
        "lemma1" => {
            let mut grid = diagnostics::lemma1_default_grid(config);
            apply_overrides(&mut grid, run_config, true, false);
            lemma1_eigenstructure_check(&grid)?
        }
        "theorem1" => {
            let mut grid = diagnostics::theorem1_default_grid(config);
            apply_overrides(&mut grid, run_config, true, true);
            theorem1_factor_limit_rate(&grid)?
        }
        "theorem2" => {
            let mut grid = diagnostics::theorem2_default_grid(config);
            apply_overrides(&mut grid, run_config, true, false);
            theorem2_loadings_rate(&grid, &[0])?
        }
        "theorem3" => {
            // coupled rate plus the fixed-T error floor, in one report
            let mut coupled = diagnostics::theorem3_coupled_default_grid(config.clone());
            apply_overrides(&mut coupled, run_config, true, false);
            let mut report = theorem3_factor_consistency(&coupled)?;
            let mut floor = diagnostics::theorem3_floor_default_grid(config);
            if let Some(reps) = run_config.replications {
                floor.replications = reps;
            }
            if let Some(t) = run_config.t_fixed {
                floor.t_scheme = TScheme::Fixed(t);
            }
            let floor_report = theorem3_factor_consistency(&floor)?;
            report.rows.extend(floor_report.rows);
            report.fits.extend(floor_report.fits);
            report
        }
        "theorem3-fixedT" => {
            let mut grid = diagnostics::theorem3_fixed_t_default_grid(config);
            apply_overrides(&mut grid, run_config, true, true);
            theorem3_factor_space_fixed_t(&grid)?
        }
        "lemma2" => {
            let mut grid = diagnostics::lemma2_default_grid(config);
            if let Some(reps) = run_config.replications {
                grid.replications = reps;
            }
            if let Some(ts) = &run_config.t_values {
                grid.t_scheme = TScheme::Varying(ts.clone());
            }
            lemma2_sample_rates(&grid)?
        }
        other => bail!("unknown suite '{other}'"),
    };
    Ok(report)
}

fn apply_overrides(grid: &mut RateGrid, run_config: &RunConfig, n_axis: bool, t_fixed: bool) {
    if n_axis {
        if let Some(ns) = &run_config.n_values {
            grid.n_values = ns.clone();
        }
    }
    if let Some(reps) = run_config.replications {
        grid.replications = reps;
    }
    if t_fixed {
        if let Some(t) = run_config.t_fixed {
            grid.t_scheme = TScheme::Fixed(t);
        }
    }
}

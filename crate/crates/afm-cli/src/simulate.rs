//! `afm simulate`: draw one synthetic panel and write it with its truth
//! sidecar.

use std::path::Path;

use afm_core::dgp::simulate_panel;
use afm_core::pca::limit_objects;
use anyhow::{Context, Result};

use crate::config::load_run_config;
use crate::panel_io::{truth_path_for, write_panel_csv, write_truth_csv, TruthSidecar};

pub fn run(
    config_path: &Path,
    n: usize,
    t_len: usize,
    out: &Path,
    seed_override: Option<u64>,
    replicate: u64,
) -> Result<()> {
    let mut run_config = load_run_config(config_path)?;
    if let Some(seed) = seed_override {
        run_config.model.seed = seed;
    }
    let model = &run_config.model;
    let panel = simulate_panel(model, n, t_len, replicate).context("simulation failed")?;
    let limits = limit_objects(model, &panel.loadings.view(), &panel.factors.view())
        .context("limit objects")?;

    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    }
    write_panel_csv(out, &panel.observations)?;
    let truth = TruthSidecar {
        factors: panel.factors.clone(),
        loadings: panel.loadings.clone(),
        f_infinity: limits.f_infinity,
        p_lambda: limits.p_lambda,
    };
    write_truth_csv(&truth_path_for(out), &truth)?;
    eprintln!(
        "wrote {} ({} x {}) and {}",
        out.display(),
        t_len,
        n,
        truth_path_for(out).display()
    );
    Ok(())
}

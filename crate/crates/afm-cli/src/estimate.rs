//! `afm estimate`: normalized-principal-components estimation of a panel
//! CSV, with scoring against a truth sidecar when one sits next to the
//! panel.

use std::path::Path;

use afm_core::diagnostics::fmt_float;
use afm_core::pca::{align_columns_to, estimate_from_panel, rotation_h, FactorEstimate};
use anyhow::{Context, Result};
use ndarray::{Array2, Axis};

use crate::panel_io::{
    atomic_write, read_panel_csv, read_truth_csv, truth_path_for, write_matrix_csv, TruthSidecar,
};

pub fn run(
    panel_path: &Path,
    r: usize,
    out_dir: &Path,
    demean_flag: bool,
    config_path: Option<&Path>,
) -> Result<()> {
    let demean = match config_path {
        Some(path) => demean_flag || crate::config::load_run_config(path)?.demean,
        None => demean_flag,
    };
    let mut data = read_panel_csv(panel_path)?;
    if demean {
        let means = data.mean_axis(Axis(0)).expect("nonempty panel");
        data -= &means.insert_axis(Axis(0));
    }
    let est = estimate_from_panel(&data.view(), r).context("estimation failed")?;

    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;
    write_matrix_csv(&out_dir.join("factors.csv"), "t", "factor", &est.factors)?;
    write_matrix_csv(&out_dir.join("loadings.csv"), "series", "loading", &est.loadings)?;
    write_eigenvalues(&out_dir.join("eigenvalues.csv"), &est)?;

    let truth_path = truth_path_for(panel_path);
    if truth_path.exists() {
        let truth = read_truth_csv(&truth_path)?;
        let scores = score_against_truth(&est, &truth, &data)?;
        atomic_write(&out_dir.join("scores.csv"), &scores)?;
        eprintln!(
            "wrote factors, loadings, eigenvalues, and scores to {}",
            out_dir.display()
        );
    } else {
        eprintln!(
            "wrote factors, loadings, and eigenvalues to {} (no truth sidecar found)",
            out_dir.display()
        );
    }
    Ok(())
}

fn write_eigenvalues(path: &Path, est: &FactorEstimate) -> Result<()> {
    let mut out = String::from("index,eigenvalue\n");
    for (j, v) in est.eigen.values().iter().enumerate() {
        out.push_str(&format!("{},{}\n", j + 1, fmt_float(*v)));
    }
    atomic_write(path, &out)
}

fn score_against_truth(
    est: &FactorEstimate,
    truth: &TruthSidecar,
    data: &Array2<f64>,
) -> Result<String> {
    let t_len = est.factors.nrows() as f64;
    let aligned = align_columns_to(&est.factors.view(), &truth.f_infinity.view());

    let rms_f_inf = {
        let mse: f64 = aligned
            .iter()
            .zip(truth.f_infinity.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / t_len;
        mse.sqrt()
    };

    let h_raw = rotation_h(&est.factors.view(), &truth.factors.view())?;
    let h_aligned = rotation_h(&aligned.view(), &truth.factors.view())?;
    let h_dist: f64 = h_aligned
        .iter()
        .zip(truth.p_lambda.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();

    let recon = est.reconstruction();
    let num: f64 = recon
        .iter()
        .zip(data.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = data.iter().map(|x| x * x).sum::<f64>().sqrt();
    let recon_rel = if den > 0.0 { num / den } else { 0.0 };

    let mut out = String::from("metric,value\n");
    out.push_str(&format!("rms_fhat_vs_f_infinity,{}\n", fmt_float(rms_f_inf)));
    for a in 0..h_raw.nrows() {
        for b in 0..h_raw.ncols() {
            out.push_str(&format!(
                "h_hat_{}_{},{}\n",
                a + 1,
                b + 1,
                fmt_float(h_raw[(a, b)])
            ));
        }
    }
    out.push_str(&format!("h_dist_to_p_lambda,{}\n", fmt_float(h_dist)));
    out.push_str(&format!(
        "reconstruction_rel_error,{}\n",
        fmt_float(recon_rel)
    ));
    Ok(out)
}

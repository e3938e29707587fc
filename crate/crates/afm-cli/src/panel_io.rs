//! Panel and sidecar file formats.
//!
//! Panel CSV: header `t,series_1,...,series_n`, one row per time point, no
//! missing values. Truth sidecar: long-format CSV `kind,index,col_1,...,col_r`
//! holding the simulated factors, loadings, the limit path `F∞`, and the
//! limit rotation `P_Λ`, so a later `estimate` run can score itself.
//!
//! All numeric output uses 17 significant digits (lossless f64 round trip)
//! and every write goes through a same-directory temp file plus rename.

use std::path::{Path, PathBuf};

use afm_core::diagnostics::fmt_float;
use anyhow::{bail, Context, Result};
use ndarray::Array2;

/// Write atomically: temp file in the target directory, then rename.
pub fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut file = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d),
        None => tempfile::NamedTempFile::new_in("."),
    }
    .with_context(|| format!("cannot create temp file next to {}", path.display()))?;
    use std::io::Write;
    file.write_all(contents.as_bytes())
        .with_context(|| format!("cannot write {}", path.display()))?;
    file.persist(path)
        .with_context(|| format!("cannot persist {}", path.display()))?;
    Ok(())
}

pub fn write_panel_csv(path: &Path, data: &Array2<f64>) -> Result<()> {
    let (t_len, n) = data.dim();
    let mut out = String::from("t");
    for i in 1..=n {
        out.push_str(&format!(",series_{i}"));
    }
    out.push('\n');
    for t in 0..t_len {
        out.push_str(&format!("{}", t + 1));
        for i in 0..n {
            out.push(',');
            out.push_str(&fmt_float(data[(t, i)]));
        }
        out.push('\n');
    }
    atomic_write(path, &out)
}

/// Read a panel CSV, rejecting ragged rows and non-numeric cells with the
/// offending row and column in the message.
pub fn read_panel_csv(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read panel {}", path.display()))?;
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        bail!("{}: empty file", path.display());
    };
    let header_cells: Vec<&str> = header.split(',').collect();
    if header_cells.first() != Some(&"t") || header_cells.len() < 2 {
        bail!(
            "{}: header must be 't,series_1,...,series_n', got '{header}'",
            path.display()
        );
    }
    let n = header_cells.len() - 1;
    let mut values = Vec::new();
    let mut t_len = 0;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row = idx + 1; // 1-based line number
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n + 1 {
            bail!(
                "{}: row {row}: expected {} columns, got {}",
                path.display(),
                n + 1,
                cells.len()
            );
        }
        for (c, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                anyhow::anyhow!(
                    "{}: row {row}, column {}: invalid numeric cell '{cell}'",
                    path.display(),
                    c + 1
                )
            })?;
            if c > 0 {
                values.push(v);
            }
        }
        t_len += 1;
    }
    if t_len == 0 {
        bail!("{}: no data rows", path.display());
    }
    Array2::from_shape_vec((t_len, n), values).context("panel shape")
}

/// Ground-truth objects written next to a simulated panel.
#[derive(Debug, Clone)]
pub struct TruthSidecar {
    pub factors: Array2<f64>,
    pub loadings: Array2<f64>,
    pub f_infinity: Array2<f64>,
    pub p_lambda: Array2<f64>,
}

/// Sidecar path convention: `panel.csv` -> `panel.truth.csv`.
pub fn truth_path_for(panel: &Path) -> PathBuf {
    let stem = panel
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "panel".to_string());
    panel.with_file_name(format!("{stem}.truth.csv"))
}

const TRUTH_KINDS: [&str; 4] = ["factor", "loading", "f_infinity", "p_lambda"];

pub fn write_truth_csv(path: &Path, truth: &TruthSidecar) -> Result<()> {
    let r = truth.factors.ncols();
    let mut out = String::from("kind,index");
    for j in 1..=r {
        out.push_str(&format!(",col_{j}"));
    }
    out.push('\n');
    let mut push_block = |kind: &str, m: &Array2<f64>| {
        for i in 0..m.nrows() {
            out.push_str(&format!("{kind},{}", i + 1));
            for j in 0..m.ncols() {
                out.push(',');
                out.push_str(&fmt_float(m[(i, j)]));
            }
            out.push('\n');
        }
    };
    push_block("factor", &truth.factors);
    push_block("loading", &truth.loadings);
    push_block("f_infinity", &truth.f_infinity);
    push_block("p_lambda", &truth.p_lambda);
    atomic_write(path, &out)
}

pub fn read_truth_csv(path: &Path) -> Result<TruthSidecar> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read truth sidecar {}", path.display()))?;
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        bail!("{}: empty sidecar", path.display());
    };
    let r = header.split(',').count().saturating_sub(2);
    if r == 0 {
        bail!("{}: malformed sidecar header '{header}'", path.display());
    }
    let mut blocks: std::collections::HashMap<&str, Vec<Vec<f64>>> = Default::default();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != r + 2 {
            bail!("{}: sidecar row {}: wrong column count", path.display(), idx + 2);
        }
        let kind = TRUTH_KINDS
            .iter()
            .find(|k| **k == cells[0])
            .with_context(|| format!("{}: unknown sidecar kind '{}'", path.display(), cells[0]))?;
        let row: Vec<f64> = cells[2..]
            .iter()
            .map(|c| {
                c.trim()
                    .parse()
                    .with_context(|| format!("{}: bad sidecar value '{c}'", path.display()))
            })
            .collect::<Result<_>>()?;
        blocks.entry(kind).or_default().push(row);
    }
    let take = |kind: &str| -> Result<Array2<f64>> {
        let rows = blocks
            .get(kind)
            .with_context(|| format!("{}: sidecar is missing '{kind}' rows", path.display()))?;
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Array2::from_shape_vec((rows.len(), r), flat).context("sidecar shape")
    };
    Ok(TruthSidecar {
        factors: take("factor")?,
        loadings: take("loading")?,
        f_infinity: take("f_infinity")?,
        p_lambda: take("p_lambda")?,
    })
}

/// Generic matrix CSV with a 1-based index column.
pub fn write_matrix_csv(
    path: &Path,
    index_name: &str,
    col_prefix: &str,
    m: &Array2<f64>,
) -> Result<()> {
    let mut out = String::from(index_name);
    for j in 1..=m.ncols() {
        out.push_str(&format!(",{col_prefix}_{j}"));
    }
    out.push('\n');
    for i in 0..m.nrows() {
        out.push_str(&format!("{}", i + 1));
        for j in 0..m.ncols() {
            out.push(',');
            out.push_str(&fmt_float(m[(i, j)]));
        }
        out.push('\n');
    }
    atomic_write(path, &out)
}

//! Symmetric eigendecomposition with a deterministic sign convention, plus
//! first-order (Wilkinson-style) perturbation predictors for eigenvalues and
//! eigenvectors of symmetric matrices.
//!
//! Two solver paths sit behind [`top_r_eigs`]:
//! - a cyclic Jacobi sweep for small matrices (robust for clustered spectra),
//! - block subspace iteration with Rayleigh-Ritz extraction for large ones,
//!   which is fast exactly when the spectrum is spiked — the regime every
//!   factor-model covariance in this crate lives in.
//!
//! Both paths are bit-deterministic: the same input bytes produce the same
//! output bytes, independent of thread count or call order.

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Largest matrix order handled by the dense Jacobi path.
const JACOBI_CUTOFF: usize = 128;
/// Validation threshold on `max |A - A'|`.
const SYMMETRY_TOL: f64 = 1e-8;
/// Relative gap below which eigenvalues are treated as degenerate.
const DEGENERACY_REL_TOL: f64 = 1e-10;
/// Sign-pivot entries smaller than this fall back to the largest-modulus rule.
const SIGN_PIVOT_TOL: f64 = 1e-12;
/// Fixed key for the subspace-iteration starting block (input-independent).
const SUBSPACE_SEED: [u8; 32] = *b"afm-subspace-iteration-start-key";

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: max |A - A'| = {max_asymmetry:.3e} exceeds {tol:.0e}")]
    NotSymmetric { max_asymmetry: f64, tol: f64 },
    #[error("requested {r} eigenpairs from a {n}x{n} matrix")]
    InvalidOrder { r: usize, n: usize },
    #[error("eigenvalue {j} is not simple: gap to eigenvalue {l} is {gap:.3e}")]
    DegenerateGap { j: usize, l: usize, gap: f64 },
    #[error("subspace iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("index {index} out of range for a system of order {order}")]
    IndexOutOfRange { index: usize, order: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Top-`r` eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
///
/// `vectors` holds the orthonormal eigenvectors as rows (the paper-style
/// `P(A)` layout, `r x n`). The sign of each row follows the convention that
/// the diagonal of the leading `r x r` block of `P' M^{1/2}` is nonnegative;
/// see [`fix_signs`].
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    values: Vec<f64>,
    vectors: Array2<f64>,
    next_value: Option<f64>,
    gap: f64,
    degenerate: bool,
}

impl EigenSystem {
    /// Assemble a system from raw parts. `values` must be sorted descending
    /// and `vectors` must have one row per value.
    pub fn new(
        values: Vec<f64>,
        vectors: Array2<f64>,
        next_value: Option<f64>,
    ) -> Result<Self, SpectraError> {
        if vectors.nrows() != values.len() {
            return Err(SpectraError::DimensionMismatch {
                expected: values.len(),
                actual: vectors.nrows(),
            });
        }
        if values.len() > vectors.ncols() {
            return Err(SpectraError::InvalidOrder {
                r: values.len(),
                n: vectors.ncols(),
            });
        }
        Ok(Self::assemble(values, vectors, next_value))
    }

    fn assemble(values: Vec<f64>, vectors: Array2<f64>, next_value: Option<f64>) -> Self {
        let scale = values.first().map_or(1.0, |v| v.abs()).max(1.0);
        let mut gap = f64::INFINITY;
        let mut degenerate = false;
        for w in values.windows(2) {
            let d = w[0] - w[1];
            gap = gap.min(d);
            if d < DEGENERACY_REL_TOL * scale {
                degenerate = true;
            }
        }
        if let (Some(last), Some(next)) = (values.last(), next_value) {
            let d = last - next;
            gap = gap.min(d);
            if d < DEGENERACY_REL_TOL * scale {
                degenerate = true;
            }
        }
        Self {
            values,
            vectors,
            next_value,
            gap,
            degenerate,
        }
    }

    /// Number of eigenpairs (`r`).
    pub fn order(&self) -> usize {
        self.values.len()
    }

    /// Dimension `n` of the underlying matrix.
    pub fn dimension(&self) -> usize {
        self.vectors.ncols()
    }

    /// Eigenvalues, descending.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row eigenvectors (`r x n`), aligned with [`Self::values`].
    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    /// The `(r+1)`-th eigenvalue, when the solver produced one.
    pub fn next_value(&self) -> Option<f64> {
        self.next_value
    }

    /// Smallest consecutive eigenvalue difference, including the distance
    /// from `values[r-1]` to the `(r+1)`-th eigenvalue if known.
    pub fn gap(&self) -> f64 {
        self.gap
    }

    /// True when two of the top `r+1` eigenvalues coincide within the
    /// degeneracy threshold; eigenvectors are then not individually unique.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }
}

/// All `n` eigenpairs of a symmetric matrix (row eigenvectors, values
/// descending). Input to the perturbation predictors, which need the full
/// spectrum for their cross terms.
#[derive(Debug, Clone, PartialEq)]
pub struct FullEigenSystem {
    values: Vec<f64>,
    vectors: Array2<f64>,
}

impl FullEigenSystem {
    pub fn order(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    /// Top-`r` view of the full system, sign-fixed.
    pub fn truncate(&self, r: usize) -> Result<EigenSystem, SpectraError> {
        let n = self.order();
        if r == 0 || r > n {
            return Err(SpectraError::InvalidOrder { r, n });
        }
        let values = self.values[..r].to_vec();
        let vectors = self
            .vectors
            .slice(ndarray::s![..r, ..])
            .to_owned();
        let next = self.values.get(r).copied();
        Ok(fix_signs(EigenSystem::assemble(values, vectors, next)))
    }
}

fn check_square(a: &ArrayView2<f64>) -> Result<usize, SpectraError> {
    if a.nrows() != a.ncols() {
        return Err(SpectraError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(a.nrows())
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

fn check_symmetric(a: &ArrayView2<f64>) -> Result<(), SpectraError> {
    let asym = max_asymmetry(a);
    if asym > SYMMETRY_TOL {
        return Err(SpectraError::NotSymmetric {
            max_asymmetry: asym,
            tol: SYMMETRY_TOL,
        });
    }
    Ok(())
}

fn symmetrized(a: &ArrayView2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut b = a.to_owned();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (b[(i, j)] + b[(j, i)]);
            b[(i, j)] = m;
            b[(j, i)] = m;
        }
    }
    b
}

/// Eigenpairs of the `r` largest eigenvalues of a symmetric matrix,
/// descending, orthonormal, and sign-fixed per [`fix_signs`].
///
/// The result also carries the `(r+1)`-th eigenvalue (when `r < n`) so that
/// callers can inspect the spectral gap, and a degeneracy flag when any two
/// of the top `r+1` eigenvalues coincide within `1e-10` relative tolerance.
pub fn top_r_eigs(a: &ArrayView2<f64>, r: usize) -> Result<EigenSystem, SpectraError> {
    let n = check_square(a)?;
    if r == 0 || r > n {
        return Err(SpectraError::InvalidOrder { r, n });
    }
    check_symmetric(a)?;
    let b = symmetrized(a);
    if n <= JACOBI_CUTOFF {
        full_jacobi(&b).truncate(r)
    } else {
        let (values, vectors, next) = subspace_top_eigs(&b, r)?;
        Ok(fix_signs(EigenSystem::assemble(values, vectors, next)))
    }
}

/// Full eigendecomposition of a symmetric matrix via cyclic Jacobi sweeps.
///
/// Intended for small and moderate orders (perturbation predictors, limit
/// grams, test oracles); cost grows as `n^3` per sweep.
pub fn sym_eigen_full(a: &ArrayView2<f64>) -> Result<FullEigenSystem, SpectraError> {
    check_square(a)?;
    check_symmetric(a)?;
    Ok(full_jacobi(&symmetrized(a)))
}

fn full_jacobi(b: &Array2<f64>) -> FullEigenSystem {
    let (values, columns) = jacobi_eigen(b);
    let n = values.len();
    let mut vectors = Array2::zeros((n, n));
    for j in 0..n {
        for i in 0..n {
            vectors[(j, i)] = columns[(i, j)];
        }
    }
    FullEigenSystem { values, vectors }
}

/// Cyclic Jacobi on a symmetric matrix. Returns eigenvalues sorted descending
/// and the orthogonal matrix whose column `k` is the `k`-th eigenvector.
fn jacobi_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v: Array2<f64> = Array2::eye(n);
    if n > 1 {
        let fro: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        let stop = 1e-15 * fro.max(f64::MIN_POSITIVE);
        for _sweep in 0..64 {
            let off: f64 = {
                let mut s = 0.0;
                for p in 0..n {
                    for q in (p + 1)..n {
                        s += m[(p, q)].abs();
                    }
                }
                s
            };
            if off <= stop {
                break;
            }
            for p in 0..n - 1 {
                for q in (p + 1)..n {
                    let apq = m[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = 0.5 * (m[(q, q)] - m[(p, p)]) / apq;
                    let t = if theta >= 0.0 {
                        1.0 / (theta + (1.0 + theta * theta).sqrt())
                    } else {
                        -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    let tau = s / (1.0 + c);
                    let h = t * apq;
                    m[(p, p)] -= h;
                    m[(q, q)] += h;
                    m[(p, q)] = 0.0;
                    m[(q, p)] = 0.0;
                    for i in 0..n {
                        if i != p && i != q {
                            let aip = m[(i, p)];
                            let aiq = m[(i, q)];
                            m[(i, p)] = aip - s * (aiq + tau * aip);
                            m[(i, q)] = aiq + s * (aip - tau * aiq);
                            m[(p, i)] = m[(i, p)];
                            m[(q, i)] = m[(i, q)];
                        }
                    }
                    for i in 0..n {
                        let vip = v[(i, p)];
                        let viq = v[(i, q)];
                        v[(i, p)] = vip - s * (viq + tau * vip);
                        v[(i, q)] = viq + s * (vip - tau * viq);
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut columns = Array2::zeros((n, n));
    for (k, &src) in order.iter().enumerate() {
        for i in 0..n {
            columns[(i, k)] = v[(i, src)];
        }
    }
    (values, columns)
}

/// Block subspace iteration with Rayleigh-Ritz extraction.
///
/// Runs unshifted first (fast for the positive-semidefinite spiked matrices
/// this crate solves). Unshifted power steps chase the largest-modulus end of
/// the spectrum, so if a markedly negative Ritz value shows up the iteration
/// restarts once with a Gershgorin shift that makes the operator positive
/// definite, restoring largest-by-value ordering for indefinite inputs.
fn subspace_top_eigs(
    b: &Array2<f64>,
    r: usize,
) -> Result<(Vec<f64>, Array2<f64>, Option<f64>), SpectraError> {
    match subspace_with_shift(b, r, 0.0, true) {
        Err(SpectraError::NoConvergence { residual, .. }) if residual.is_nan() => {
            let n = b.nrows();
            let mut lo = f64::INFINITY;
            for i in 0..n {
                let mut radius = 0.0;
                for j in 0..n {
                    if j != i {
                        radius += b[(i, j)].abs();
                    }
                }
                lo = lo.min(b[(i, i)] - radius);
            }
            subspace_with_shift(b, r, lo.min(0.0), false)
        }
        other => other,
    }
}

fn subspace_with_shift(
    b: &Array2<f64>,
    r: usize,
    shift: f64,
    watch_negative: bool,
) -> Result<(Vec<f64>, Array2<f64>, Option<f64>), SpectraError> {
    let n = b.nrows();
    let block = (r + 3).min(n);
    let max_iters = 3000usize;
    let eps = f64::EPSILON;
    let tol = 1e-12f64.max(20.0 * n as f64 * eps);
    let accept = 1e-9f64;

    let mut rng = ChaCha8Rng::from_seed(SUBSPACE_SEED);
    let mut v = Array2::zeros((n, block));
    for x in v.iter_mut() {
        *x = rng.random::<f64>() - 0.5;
    }
    orthonormalize_columns(&mut v, 1.0, &mut rng);

    let mut best_res = f64::INFINITY;
    let mut stall = 0usize;
    let mut last_res = f64::INFINITY;
    for iter in 0..max_iters {
        // w = (B - shift I) v
        let mut w = b.dot(&v);
        if shift != 0.0 {
            w.scaled_add(-shift, &v);
        }
        let mut s = v.t().dot(&w);
        for i in 0..block {
            for j in (i + 1)..block {
                let m = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = m;
                s[(j, i)] = m;
            }
        }
        let (theta, u) = jacobi_eigen(&s);
        let x = v.dot(&u);
        let z = w.dot(&u);
        let scale = theta
            .iter()
            .fold(0.0f64, |acc, t| acc.max(t.abs()))
            .max(f64::MIN_POSITIVE);
        if watch_negative && theta[block - 1] < -1e-8 * scale {
            // a dominant negative eigenvalue invaded the block: signal the
            // caller to restart with a positive-definite shift
            return Err(SpectraError::NoConvergence {
                iterations: iter,
                residual: f64::NAN,
            });
        }
        let mut max_res = 0.0f64;
        for j in 0..r {
            let mut ss = 0.0;
            for i in 0..n {
                let d = z[(i, j)] - theta[j] * x[(i, j)];
                ss += d * d;
            }
            max_res = max_res.max(ss.sqrt());
        }
        let converged = max_res <= tol * scale;
        let stalled = {
            if max_res < 0.99 * best_res {
                best_res = max_res;
                stall = 0;
            } else {
                stall += 1;
            }
            stall >= 10 && max_res <= accept * scale
        };
        if converged || stalled || (iter + 1 == max_iters && max_res <= accept * scale) {
            let values: Vec<f64> = theta[..r].iter().map(|t| t + shift).collect();
            let next = if block > r { Some(theta[r] + shift) } else { None };
            let mut vectors = Array2::zeros((r, n));
            for j in 0..r {
                for i in 0..n {
                    vectors[(j, i)] = x[(i, j)];
                }
            }
            return Ok((values, vectors, next));
        }
        last_res = max_res;
        v = z;
        orthonormalize_columns(&mut v, scale, &mut rng);
    }
    Err(SpectraError::NoConvergence {
        iterations: max_iters,
        residual: last_res,
    })
}

/// Modified Gram-Schmidt with a second pass; rank-deficient columns are
/// replaced by fresh deterministic fill so the block keeps full rank (the
/// sample covariance of a noiseless panel has rank `r < block`).
fn orthonormalize_columns(v: &mut Array2<f64>, scale: f64, rng: &mut ChaCha8Rng) {
    let (n, k) = v.dim();
    let floor = (1e-13 * scale.max(1.0)).max(f64::MIN_POSITIVE);
    for col in 0..k {
        let mut attempts = 0;
        loop {
            for _pass in 0..2 {
                for prev in 0..col {
                    let mut dot = 0.0;
                    for i in 0..n {
                        dot += v[(i, prev)] * v[(i, col)];
                    }
                    for i in 0..n {
                        v[(i, col)] -= dot * v[(i, prev)];
                    }
                }
            }
            let norm: f64 = (0..n).map(|i| v[(i, col)] * v[(i, col)]).sum::<f64>().sqrt();
            if norm > floor {
                for i in 0..n {
                    v[(i, col)] /= norm;
                }
                break;
            }
            for i in 0..n {
                v[(i, col)] = rng.random::<f64>() - 0.5;
            }
            attempts += 1;
            assert!(attempts < 64, "orthonormalization failed to recover rank");
        }
    }
}

/// Re-apply the sign convention: for each `j`, the `j`-th diagonal entry of
/// the leading `r x r` block of `P' M^{1/2}` (that is, `sqrt(mu_j) * p_j[j]`)
/// is made nonnegative by flipping the row when needed. When that entry is
/// within `1e-12` of zero, the first entry of largest modulus in eigenvector
/// `j` serves as the sign pivot instead. Idempotent.
pub fn fix_signs(mut system: EigenSystem) -> EigenSystem {
    let r = system.order();
    for j in 0..r {
        let scale = system.values[j].max(0.0).sqrt();
        let mut pivot = scale * system.vectors[(j, j)];
        if pivot.abs() <= SIGN_PIVOT_TOL {
            let row = system.vectors.row(j);
            let mut best = 0usize;
            let mut best_abs = 0.0f64;
            for (i, &x) in row.iter().enumerate() {
                if x.abs() > best_abs {
                    best_abs = x.abs();
                    best = i;
                }
            }
            pivot = row[best];
        }
        if pivot < 0.0 {
            for x in system.vectors.row_mut(j).iter_mut() {
                *x = -*x;
            }
        }
    }
    system
}

fn check_simple(base: &FullEigenSystem, j: usize) -> Result<(), SpectraError> {
    let n = base.order();
    if j >= n {
        return Err(SpectraError::IndexOutOfRange { index: j, order: n });
    }
    let scale = base.values.first().map_or(1.0, |v| v.abs()).max(1.0);
    for l in 0..n {
        if l == j {
            continue;
        }
        let gap = (base.values[j] - base.values[l]).abs();
        if gap < DEGENERACY_REL_TOL * scale {
            return Err(SpectraError::DegenerateGap { j, l, gap });
        }
    }
    Ok(())
}

fn check_delta(base: &FullEigenSystem, delta: &ArrayView2<f64>) -> Result<(), SpectraError> {
    let n = check_square(delta)?;
    if n != base.order() {
        return Err(SpectraError::DimensionMismatch {
            expected: base.order(),
            actual: n,
        });
    }
    check_symmetric(delta)
}

/// First-order eigenvalue shift of `mu_j` under the perturbation
/// `Gamma -> Gamma + Delta`: the Rayleigh term `p_j Delta p_j'`.
pub fn wilkinson_value_shift(
    base: &FullEigenSystem,
    delta: &ArrayView2<f64>,
    j: usize,
) -> Result<f64, SpectraError> {
    check_delta(base, delta)?;
    check_simple(base, j)?;
    let p_j = base.vectors.row(j);
    let dp = delta.dot(&p_j);
    Ok(p_j.dot(&dp))
}

/// First-order eigenvector shift of `p_j` under `Gamma -> Gamma + Delta`:
/// `sum_{l != j} (p_l Delta p_j') / (mu_j - mu_l) * p_l`.
pub fn wilkinson_vector_shift(
    base: &FullEigenSystem,
    delta: &ArrayView2<f64>,
    j: usize,
) -> Result<Array1<f64>, SpectraError> {
    check_delta(base, delta)?;
    check_simple(base, j)?;
    let n = base.order();
    let p_j = base.vectors.row(j);
    let dp = delta.dot(&p_j);
    let mut shift = Array1::zeros(n);
    for l in 0..n {
        if l == j {
            continue;
        }
        let p_l = base.vectors.row(l);
        let coeff = p_l.dot(&dp) / (base.values[j] - base.values[l]);
        for i in 0..n {
            shift[i] += coeff * p_l[i];
        }
    }
    Ok(shift)
}

/// Smallest eigenvalue of a symmetric tridiagonal matrix by Sturm-sequence
/// bisection. `offdiag` must have length `diag.len() - 1` (empty for 1x1).
pub fn tridiag_smallest_eigenvalue(diag: &[f64], offdiag: &[f64]) -> f64 {
    let n = diag.len();
    assert!(n >= 1, "empty tridiagonal matrix");
    assert_eq!(offdiag.len(), n.saturating_sub(1), "offdiagonal length");
    if n == 1 {
        return diag[0];
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let mut radius = 0.0;
        if i > 0 {
            radius += offdiag[i - 1].abs();
        }
        if i < n - 1 {
            radius += offdiag[i].abs();
        }
        lo = lo.min(diag[i] - radius);
        hi = hi.max(diag[i] + radius);
    }
    let b_max = offdiag.iter().fold(0.0f64, |acc, b| acc.max(b * b));
    let pivmin = (f64::MIN_POSITIVE / f64::EPSILON).max(f64::MIN_POSITIVE * b_max);
    let count_below = |x: f64| -> usize {
        let mut count = 0;
        let mut d = 1.0f64;
        for i in 0..n {
            let bb = if i == 0 {
                0.0
            } else {
                offdiag[i - 1] * offdiag[i - 1]
            };
            d = (diag[i] - x) - bb / d;
            if d.abs() < pivmin {
                d = -pivmin;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

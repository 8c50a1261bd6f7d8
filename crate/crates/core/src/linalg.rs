//! Dense symmetric eigendecomposition, truncated SVD, pseudo-inverse and
//! PSD square root, plus a Lanczos estimator for spectral norms of large
//! symmetric operators.
//!
//! All eigen/singular vector blocks returned here follow one sign
//! convention: in every column the entry of largest magnitude is positive
//! (first such entry on exact ties). Eigenvalues are always descending.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::rng::rng_from_seed;

/// Relative cutoff below which eigenvalues are dropped from reduced forms.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

/// Dimension up to which symmetric spectral norms are computed with a full
/// dense eigendecomposition; larger operators go through Lanczos.
pub const DENSE_NORM_MAX: usize = 1200;

const EIGEN_MAX_ITER: usize = 10_000;

/// Reduced eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEvd {
    /// p×r, orthonormal columns.
    pub vectors: DMatrix<f64>,
    /// Length r, descending.
    pub values: DVector<f64>,
    /// Number of eigenvalues dropped by the rank tolerance.
    pub discarded: usize,
}

impl SymmetricEvd {
    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    /// U diag(values) Uᵀ.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = scale_columns(&self.vectors, self.values.as_slice());
        &scaled * self.vectors.transpose()
    }
}

/// Truncated singular value decomposition A ≈ U diag(svals) Vᵀ.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: DMatrix<f64>,
    pub svals: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// Flips column signs so the largest-magnitude entry of each column is positive.
pub fn fix_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &x in col.iter() {
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

/// Multiplies column j of `m` by `s[j]`.
pub fn scale_columns(m: &DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= s[j];
    }
    out
}

/// Multiplies row i of `m` by `s[i]` in place.
pub fn scale_rows_mut(m: &mut DMatrix<f64>, s: &[f64]) {
    let nrows = m.nrows();
    for mut col in m.column_iter_mut() {
        for i in 0..nrows {
            col[i] *= s[i];
        }
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
}

/// max |A − Aᵀ|.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// max |UᵀU − I|.
pub fn orthonormality_error(u: &DMatrix<f64>) -> f64 {
    let g = u.tr_mul(u);
    let mut worst = 0.0f64;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

fn check_square_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(invalid(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(invalid("matrix has non-finite entries"));
    }
    let tol = 1e-10 * max_abs(a).max(1.0);
    let asym = asymmetry(a);
    if asym > tol {
        return Err(invalid(format!(
            "matrix is not symmetric (max |A - A^T| = {asym:e})"
        )));
    }
    Ok(())
}

/// Full spectrum of a symmetric matrix, descending, with sign-fixed vectors.
pub fn full_sym_spectrum(a: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_square_symmetric(a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    // Symmetrize exactly so the solver sees a bit-symmetric input.
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, EIGEN_MAX_ITER).ok_or(
        Error::NonConvergence {
            iterations: EIGEN_MAX_ITER,
        },
    )?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = eig.eigenvectors.select_columns(order.iter());
    fix_signs(&mut vectors);
    Ok((values, vectors))
}

pub fn sym_evd(a: &DMatrix<f64>) -> Result<SymmetricEvd> {
    sym_evd_with_tol(a, DEFAULT_RANK_TOL)
}

/// Reduced EVD keeping eigenvalues above `rank_tol · max|λ|`.
pub fn sym_evd_with_tol(a: &DMatrix<f64>, rank_tol: f64) -> Result<SymmetricEvd> {
    let (values, vectors) = full_sym_spectrum(a)?;
    let scale = values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let cutoff = rank_tol * scale;
    let keep: Vec<usize> = (0..values.len())
        .filter(|&i| values[i] > cutoff && values[i] > 0.0)
        .collect();
    Ok(SymmetricEvd {
        vectors: vectors.select_columns(keep.iter()),
        values: DVector::from_iterator(keep.len(), keep.iter().map(|&i| values[i])),
        discarded: values.len() - keep.len(),
    })
}

/// Top-k singular triplets.
pub fn truncated_svd(a: &DMatrix<f64>, k: usize) -> Result<TruncatedSvd> {
    let (p, q) = a.shape();
    if k == 0 || k > p.min(q) {
        return Err(invalid(format!(
            "rank {k} out of range for a {p}x{q} matrix"
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(invalid("matrix has non-finite entries"));
    }
    let svd = nalgebra::linalg::SVD::try_new(a.clone(), true, true, f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or(Error::NonConvergence {
        iterations: EIGEN_MAX_ITER,
    })?;
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Numerical("SVD factors missing".into())),
    };
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    order.truncate(k);
    let mut u = u.select_columns(order.iter());
    let mut v = vt.transpose().select_columns(order.iter());
    // Sign-fix on U and carry the flip over to V so A V = U Σ still holds.
    for j in 0..k {
        let col = u.column(j);
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &x in col.iter() {
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }
    let svals = DVector::from_iterator(k, order.iter().map(|&i| svd.singular_values[i]));
    Ok(TruncatedSvd { u, svals, v })
}

/// Leading k left singular vectors of a tall matrix through its Gram matrix,
/// followed by a Cholesky re-orthonormalization of the lifted block.
/// Cost O(p q² + p q k); never forms a p×p matrix.
pub fn leading_left_singular(a: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (p, q) = a.shape();
    if k == 0 || k > p.min(q) {
        return Err(invalid(format!(
            "rank {k} out of range for a {p}x{q} matrix"
        )));
    }
    let gram = a.tr_mul(a);
    let (values, vectors) = full_sym_spectrum(&gram)?;
    let top = values[0].max(0.0);
    if values[k - 1] <= DEFAULT_RANK_TOL * top || values[k - 1] <= 0.0 {
        return Err(Error::Numerical(format!(
            "matrix has numerical rank below {k} (sigma_k^2 = {:e})",
            values[k - 1]
        )));
    }
    let svals: Vec<f64> = (0..k).map(|i| values[i].sqrt()).collect();
    let vk = vectors.columns(0, k).into_owned();
    let inv: Vec<f64> = svals.iter().map(|s| 1.0 / s).collect();
    let mut u = a * scale_columns(&vk, &inv);
    u = reorthonormalize(u)?;
    fix_signs(&mut u);
    Ok((u, DVector::from_vec(svals)))
}

/// Orthonormalizes the columns of a nearly-orthonormal block via Cholesky
/// of its Gram matrix (U R⁻¹ with UᵀU = RᵀR).
pub fn reorthonormalize(u: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let g = u.tr_mul(&u);
    let chol = nalgebra::linalg::Cholesky::new(g).ok_or_else(|| {
        Error::Numerical("Gram matrix of embedding is not positive definite".into())
    })?;
    let r = chol.l().transpose();
    // Solve X R = U  <=>  Rᵀ Xᵀ = Uᵀ.
    let xt = r
        .transpose()
        .solve_lower_triangular(&u.transpose())
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))?;
    Ok(xt.transpose())
}

/// U diag(1/λ) Uᵀ over the retained spectrum.
pub fn pseudo_inverse_from_evd(evd: &SymmetricEvd) -> DMatrix<f64> {
    let inv: Vec<f64> = evd.values.iter().map(|x| 1.0 / x).collect();
    scale_columns(&evd.vectors, &inv) * evd.vectors.transpose()
}

/// First l eigenpairs (the best rank-l approximation).
pub fn best_rank_l(evd: &SymmetricEvd, l: usize) -> Result<SymmetricEvd> {
    let r = evd.rank();
    if l == 0 || l > r {
        return Err(invalid(format!("rank {l} out of range 1..={r}")));
    }
    Ok(SymmetricEvd {
        vectors: evd.vectors.columns(0, l).into_owned(),
        values: evd.values.rows(0, l).into_owned(),
        discarded: evd.discarded + (r - l),
    })
}

/// Symmetric PSD square root U diag(√max(λ,0)) Uᵀ.
pub fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = full_sym_spectrum(a)?;
    if values.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    let top = values[0].max(0.0);
    let lowest = values[values.len() - 1];
    if lowest < -1e-10 * top.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd { eigenvalue: lowest });
    }
    let roots: Vec<f64> = values.iter().map(|x| x.max(0.0).sqrt()).collect();
    Ok(scale_columns(&vectors, &roots) * vectors.transpose())
}

/// Largest singular value of an arbitrary dense matrix.
pub fn spectral_norm(a: &DMatrix<f64>) -> Result<f64> {
    if a.is_empty() {
        return Ok(0.0);
    }
    if a.nrows() == a.ncols() && asymmetry(a) <= 1e-12 * max_abs(a).max(1.0) {
        return spectral_norm_sym(a);
    }
    // σ₁(A)² = λ_max(AᵀA) on the smaller side.
    let gram = if a.nrows() >= a.ncols() {
        a.tr_mul(a)
    } else {
        a * a.transpose()
    };
    Ok(spectral_norm_sym(&gram)?.max(0.0).sqrt())
}

/// max |λ| of a symmetric matrix: dense EVD for small sizes, Lanczos above.
pub fn spectral_norm_sym(a: &DMatrix<f64>) -> Result<f64> {
    let n = a.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    if n <= DENSE_NORM_MAX {
        let (values, _) = full_sym_spectrum(a)?;
        return Ok(values[0].abs().max(values[n - 1].abs()));
    }
    check_square_symmetric(a)?;
    lanczos_norm(n, |x, y| {
        let xv = DVector::from_column_slice(x);
        let yv = a * xv;
        y.copy_from_slice(yv.as_slice());
    })
}

/// Largest |λ| of the symmetric operator `apply` (y ← A x) by Lanczos with
/// full reorthogonalization. Deterministic: the start vector comes from a
/// fixed seed.
pub fn lanczos_norm<F>(n: usize, apply: F) -> Result<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let (hi, lo) = lanczos_extremes(n, apply, 1e-12, 400)?;
    Ok(hi.abs().max(lo.abs()))
}

/// Extreme Ritz values (largest, smallest) of a symmetric operator.
pub fn lanczos_extremes<F>(n: usize, mut apply: F, tol: f64, max_iter: usize) -> Result<(f64, f64)>
where
    F: FnMut(&[f64], &mut [f64]),
{
    use rand::Rng;
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    let max_iter = max_iter.min(n).max(1);
    let mut rng = rng_from_seed(0x006c_616e_637a_6f73);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    normalize(&mut v);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_iter);
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    let mut last: Option<(f64, f64)> = None;
    let mut stable = 0;
    for j in 0..max_iter {
        apply(&v, &mut w);
        let alpha = dot(&w, &v);
        for i in 0..n {
            w[i] -= alpha * v[i];
        }
        if let (Some(prev), Some(&beta)) = (basis.last(), betas.last()) {
            for i in 0..n {
                w[i] -= beta * prev[i];
            }
        }
        basis.push(v.clone());
        // Two passes of classical Gram-Schmidt against the whole basis.
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&w, q);
                for i in 0..n {
                    w[i] -= c * q[i];
                }
            }
        }
        alphas.push(alpha);
        let beta = dot(&w, &w).sqrt();
        let ritz = tridiagonal_extremes(&alphas, &betas)?;
        let scale = ritz.0.abs().max(ritz.1.abs()).max(f64::MIN_POSITIVE);
        if beta <= 1e-14 * scale || j + 1 == max_iter {
            return Ok(ritz);
        }
        if let Some(prev) = last {
            let change = (ritz.0 - prev.0).abs().max((ritz.1 - prev.1).abs());
            if change <= tol * scale {
                stable += 1;
                if stable >= 3 {
                    return Ok(ritz);
                }
            } else {
                stable = 0;
            }
        }
        last = Some(ritz);
        betas.push(beta);
        for i in 0..n {
            v[i] = w[i] / beta;
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
    })
}

/// Leading k eigenpairs of a symmetric operator by Lanczos with full
/// reorthogonalization. Stops once every wanted Ritz pair has residual
/// below `tol · |λ₁|`. Vectors are sign-fixed and orthonormal.
pub fn lanczos_top_k<F>(
    n: usize,
    k: usize,
    mut apply: F,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)>
where
    F: FnMut(&[f64], &mut [f64]),
{
    use rand::Rng;
    if k == 0 || k > n {
        return Err(invalid(format!(
            "cannot extract {k} eigenpairs of a dimension-{n} operator"
        )));
    }
    let max_iter = max_iter.min(n).max(k);
    let mut rng = rng_from_seed(0x006c_616e_637a_6f73);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    normalize(&mut v);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_iter);
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    for j in 0..max_iter {
        apply(&v, &mut w);
        let alpha = dot(&w, &v);
        basis.push(v.clone());
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&w, q);
                for i in 0..n {
                    w[i] -= c * q[i];
                }
            }
        }
        alphas.push(alpha);
        let beta = dot(&w, &w).sqrt();
        let steps = alphas.len();
        if steps >= k {
            let t = tridiagonal(&alphas, &betas);
            let (values, vecs) = full_sym_spectrum(&t)?;
            let scale = values[0].abs().max(f64::MIN_POSITIVE);
            let done = beta <= 1e-14 * scale
                || j + 1 == max_iter
                || (0..k).all(|i| (beta * vecs[(steps - 1, i)]).abs() <= tol * scale);
            if done {
                let mut out = DMatrix::zeros(n, k);
                for (c, q) in basis.iter().enumerate() {
                    for i in 0..k {
                        let y = vecs[(c, i)];
                        let mut col = out.column_mut(i);
                        for (o, x) in col.iter_mut().zip(q) {
                            *o += y * x;
                        }
                    }
                }
                fix_signs(&mut out);
                return Ok((values.rows(0, k).into_owned(), out));
            }
        }
        betas.push(beta);
        for i in 0..n {
            v[i] = w[i] / beta;
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
    })
}

fn tridiagonal(alphas: &[f64], betas: &[f64]) -> DMatrix<f64> {
    let k = alphas.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alphas[i];
        if i + 1 < k {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    t
}

fn tridiagonal_extremes(alphas: &[f64], betas: &[f64]) -> Result<(f64, f64)> {
    let k = alphas.len();
    let (values, _) = full_sym_spectrum(&tridiagonal(alphas, betas))?;
    Ok((values[0], values[k - 1]))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

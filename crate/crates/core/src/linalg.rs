//! Small dense linear-algebra helpers shared by the estimation modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SpeError};
use crate::scalar::Real;

/// Returns `(m + mᵀ) / 2`.
pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

/// Natural log-determinant of a symmetric positive-definite matrix.
///
/// An empty matrix has determinant one. `what` names the matrix in the error.
pub fn spd_log_det<T: Real>(m: &DMatrix<T>, what: &str) -> Result<T> {
    if m.nrows() == 0 {
        return Ok(T::zero());
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| SpeError::SingularCovariance(format!("{what} is not positive definite")))?;
    Ok(chol_log_det(chol.l_dirty()))
}

/// `2 Σ log L_ii` for a lower Cholesky factor.
pub fn chol_log_det<T: Real>(l: &DMatrix<T>) -> T {
    let mut acc = T::zero();
    for i in 0..l.nrows() {
        acc += l[(i, i)].ln();
    }
    acc * T::lit(2.0)
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse<T: Real>(m: &DMatrix<T>, what: &str) -> Result<DMatrix<T>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| SpeError::SingularCovariance(format!("{what} is not positive definite")))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Solves `m x = b` for symmetric positive-definite `m`.
pub fn spd_solve<T: Real>(m: &DMatrix<T>, b: &DMatrix<T>, what: &str) -> Result<DMatrix<T>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| SpeError::RankDeficiency(format!("{what} is singular")))?;
    Ok(chol.solve(b))
}

/// Kronecker product `a ⊗ b`.
pub fn kron<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    a.kronecker(b)
}

/// Column-stacking `vec` operator.
pub fn vec<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of `vec` for a `rows × cols` matrix.
pub fn unvec<T: Real>(v: &[T], rows: usize, cols: usize) -> DMatrix<T> {
    DMatrix::from_column_slice(rows, cols, v)
}

/// Half-vectorization: the lower triangle stacked column by column.
pub fn vech<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    let p = m.nrows();
    let mut out = Vec::with_capacity(p * (p + 1) / 2);
    for j in 0..p {
        for i in j..p {
            out.push(m[(i, j)]);
        }
    }
    DVector::from_vec(out)
}

/// Rebuilds a symmetric matrix from its half-vectorization.
pub fn unvech<T: Real>(v: &[T], p: usize) -> DMatrix<T> {
    let mut m = DMatrix::zeros(p, p);
    let mut k = 0;
    for j in 0..p {
        for i in j..p {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    m
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 {
        return T::zero();
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Moore–Penrose pseudo-inverse; singular values below `rel_cutoff · σ_max` are dropped.
pub fn pinv<T: Real>(m: &DMatrix<T>, rel_cutoff: T) -> DMatrix<T> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.max();
    let cut = smax * rel_cutoff;
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > T::zero() {
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            out += (vk * uk.transpose()) * (T::one() / s);
        }
    }
    out
}

/// Orthonormal basis for the orthogonal complement of the column space of an
/// orthonormal `p × u` matrix.
pub fn orthonormal_complement<T: Real>(g1: &DMatrix<T>) -> DMatrix<T> {
    let p = g1.nrows();
    let u = g1.ncols();
    if u == 0 {
        return DMatrix::identity(p, p);
    }
    if u == p {
        return DMatrix::zeros(p, 0);
    }
    let proj = DMatrix::<T>::identity(p, p) - g1 * g1.transpose();
    let eig = symmetrize(&proj).symmetric_eigen();
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut g0 = DMatrix::zeros(p, p - u);
    for (c, &k) in idx.iter().take(p - u).enumerate() {
        g0.set_column(c, &eig.eigenvectors.column(k));
    }
    // Re-orthonormalize against g1 to push residual overlap to round-off.
    let g0 = &g0 - g1 * (g1.transpose() * &g0);
    orthonormalize(&g0)
}

/// Orthonormal basis of the column space of a full-column-rank matrix (thin QR).
pub fn orthonormalize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    if m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let q = m.clone().qr().q();
    q.columns(0, m.ncols()).into_owned()
}

/// Singular values of `aᵀ b`, largest first.
pub fn cross_singular_values<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DVector<T> {
    let mut s = (a.transpose() * b).singular_values();
    s.as_mut_slice()
        .sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    s
}

/// Largest absolute entry.
pub fn max_abs<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

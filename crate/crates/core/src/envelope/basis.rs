use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpeError};
use crate::linalg::{max_abs, orthonormal_complement, orthonormalize};
use crate::scalar::Real;

/// Orthonormal bases `Γ₁` (`p × u`) of the envelope and `Γ₀` (`p × (p−u)`) of
/// its orthogonal complement. Only the spans are identified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeBasis<T: Real> {
    pub gamma1: DMatrix<T>,
    pub gamma0: DMatrix<T>,
}

impl<T: Real> EnvelopeBasis<T> {
    /// Validates orthonormality of both blocks and their mutual orthogonality.
    pub fn new(gamma1: DMatrix<T>, gamma0: DMatrix<T>) -> Result<Self> {
        let p = gamma1.nrows();
        if gamma0.nrows() != p || gamma1.ncols() + gamma0.ncols() != p {
            return Err(SpeError::DimensionError(format!(
                "Γ₁ is {}x{} and Γ₀ is {}x{}; columns must total p",
                p,
                gamma1.ncols(),
                gamma0.nrows(),
                gamma0.ncols()
            )));
        }
        let tol = T::tol_floor(1e-8, 1e3);
        let frame = concat_columns(&gamma1, &gamma0);
        if max_abs(&(frame.transpose() * &frame - DMatrix::identity(p, p))) > tol {
            return Err(SpeError::InvalidParameter("basis columns are not orthonormal".into()));
        }
        Ok(Self { gamma1, gamma0 })
    }

    /// Completes an orthonormal `Γ₁` with an orthonormal complement.
    pub fn from_gamma1(gamma1: DMatrix<T>) -> Result<Self> {
        let gamma0 = orthonormal_complement(&gamma1);
        Self::new(gamma1, gamma0)
    }

    /// Orthonormalizes an arbitrary full-column-rank `p × u` matrix first.
    pub fn from_span(m: &DMatrix<T>) -> Result<Self> {
        Self::from_gamma1(orthonormalize(m))
    }

    pub fn p(&self) -> usize {
        self.gamma1.nrows()
    }

    pub fn u(&self) -> usize {
        self.gamma1.ncols()
    }

    /// `P_ℰ = Γ₁Γ₁ᵀ`.
    pub fn projection(&self) -> DMatrix<T> {
        &self.gamma1 * self.gamma1.transpose()
    }

    /// `Q_ℰ = Γ₀Γ₀ᵀ`.
    pub fn complement_projection(&self) -> DMatrix<T> {
        &self.gamma0 * self.gamma0.transpose()
    }

    /// Same spans, `Γ₁` replaced by `Γ₁O` for orthogonal `O`.
    pub fn rotated(&self, o: &DMatrix<T>) -> Self {
        Self { gamma1: &self.gamma1 * o, gamma0: self.gamma0.clone() }
    }
}

pub(crate) fn concat_columns<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Unconstrained coordinates `A` of a `u`-dimensional subspace.
///
/// With the rows of the basis reordered by `row_order` (position `i` holds
/// original row `row_order[i]`), the subspace is the column space of
/// `C_A = [I_u; A]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateParam<T: Real> {
    pub a: DMatrix<T>,
    pub row_order: Vec<usize>,
}

impl<T: Real> CoordinateParam<T> {
    pub fn new(a: DMatrix<T>, row_order: Vec<usize>) -> Result<Self> {
        let p = row_order.len();
        let u = a.ncols();
        let mut seen = vec![false; p];
        for &i in &row_order {
            if i >= p || seen[i] {
                return Err(SpeError::InvalidParameter("row_order is not a permutation".into()));
            }
            seen[i] = true;
        }
        if a.nrows() + u != p {
            return Err(SpeError::DimensionError(format!("A must be {}x{u}", p.saturating_sub(u))));
        }
        Ok(Self { a, row_order })
    }

    /// Identity row order and the given `A`.
    pub fn with_identity_order(a: DMatrix<T>) -> Self {
        let p = a.nrows() + a.ncols();
        Self { a, row_order: (0..p).collect() }
    }

    pub fn p(&self) -> usize {
        self.row_order.len()
    }

    pub fn u(&self) -> usize {
        self.a.ncols()
    }

    /// Chart centred on `g1`: rows chosen by greedy pivoting so `G₁₁` is well
    /// conditioned, and `A = G₁₂G₁₁⁻¹`.
    pub fn from_basis(g1: &DMatrix<T>) -> Result<Self> {
        let p = g1.nrows();
        let u = g1.ncols();
        let row_order = pivot_rows(g1);
        let permuted = g1.select_rows(row_order.iter());
        let g11 = permuted.rows(0, u).into_owned();
        let g12 = permuted.rows(u, p - u).into_owned();
        let g11_inv = g11
            .try_inverse()
            .ok_or_else(|| SpeError::SingularCovariance("leading block of the basis is singular".into()))?;
        Ok(Self { a: g12 * g11_inv, row_order })
    }

    /// `C_A = [I_u; A]` in the permuted row order.
    pub fn c_a(&self) -> DMatrix<T> {
        let u = self.u();
        let mut c = DMatrix::zeros(self.p(), u);
        c.view_mut((0, 0), (u, u)).fill_with_identity();
        c.view_mut((u, 0), (self.p() - u, u)).copy_from(&self.a);
        c
    }

    /// `C_A` with the row permutation undone.
    pub fn c_a_original(&self) -> DMatrix<T> {
        let c = self.c_a();
        let mut out = DMatrix::zeros(self.p(), self.u());
        for (pos, &orig) in self.row_order.iter().enumerate() {
            out.set_row(orig, &c.row(pos));
        }
        out
    }
}

/// Greedy row pivoting (QR with column pivoting on `g1ᵀ`): the first `u`
/// entries are the most linearly independent rows, the rest follow in
/// original order.
pub fn pivot_rows<T: Real>(g1: &DMatrix<T>) -> Vec<usize> {
    let p = g1.nrows();
    let u = g1.ncols();
    let mut resid = g1.clone();
    let mut chosen = Vec::with_capacity(p);
    let mut used = vec![false; p];
    for _ in 0..u {
        let mut best = None;
        let mut best_norm = -T::one();
        for i in 0..p {
            if used[i] {
                continue;
            }
            let nrm = resid.row(i).norm();
            if nrm > best_norm {
                best_norm = nrm;
                best = Some(i);
            }
        }
        let i = best.expect("u <= p");
        used[i] = true;
        chosen.push(i);
        if best_norm > T::zero() {
            let v = resid.row(i).transpose() / best_norm;
            let proj = &resid * &v;
            resid -= proj * v.transpose();
        }
    }
    chosen.extend((0..p).filter(|&i| !used[i]));
    chosen
}

/// Orthonormal basis for the column space of `C_A` (in original row order),
/// completed with its orthogonal complement.
pub fn recover_basis<T: Real>(coord: &CoordinateParam<T>) -> EnvelopeBasis<T> {
    let g1 = orthonormalize(&coord.c_a_original());
    let g0 = orthonormal_complement(&g1);
    EnvelopeBasis { gamma1: g1, gamma0: g0 }
}

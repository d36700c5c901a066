//! Asymptotic covariance of the envelope estimators at known correlation
//! parameters, the full-model Fisher information, and coefficient Z-scores.
//!
//! Variances are per observation (the `√n` scale); standard errors divide by `n`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::envelope::{EnvelopeBasis, SpeFit};
use crate::error::{Result, SpeError};
use crate::linalg::{kron, pinv, spd_inverse, symmetrize, unvech, vech};
use crate::scalar::Real;

/// `p² × p(p+1)/2` duplication matrix: `E_p vech(M) = vec(M)` for symmetric `M`.
pub fn duplication_matrix<T: Real>(p: usize) -> DMatrix<T> {
    let mut e = DMatrix::zeros(p * p, p * (p + 1) / 2);
    let mut k = 0;
    for j in 0..p {
        for i in j..p {
            e[(j * p + i, k)] = T::one();
            e[(i * p + j, k)] = T::one();
            k += 1;
        }
    }
    e
}

/// `p(p+1)/2 × p²` elimination matrix: `C_p vec(M) = vech(M)`.
pub fn elimination_matrix<T: Real>(p: usize) -> DMatrix<T> {
    let mut c = DMatrix::zeros(p * (p + 1) / 2, p * p);
    let mut k = 0;
    for j in 0..p {
        for i in j..p {
            c[(k, j * p + i)] = T::one();
            k += 1;
        }
    }
    c
}

/// Envelope parameters entering the asymptotic covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralParams<T: Real> {
    pub sigma_ygx: DMatrix<T>,
    /// `u × r`.
    pub eta: DMatrix<T>,
    pub basis: EnvelopeBasis<T>,
    pub omega1: DMatrix<T>,
    pub omega0: DMatrix<T>,
}

impl<T: Real> StructuralParams<T> {
    pub fn new(
        sigma_ygx: DMatrix<T>,
        eta: DMatrix<T>,
        basis: EnvelopeBasis<T>,
        omega1: DMatrix<T>,
        omega0: DMatrix<T>,
    ) -> Result<Self> {
        let (p, u) = (basis.p(), basis.u());
        let r = sigma_ygx.nrows();
        if r == 0 || sigma_ygx.ncols() != r {
            return Err(SpeError::DimensionError("Σ_{Y|X} must be square and nonempty".into()));
        }
        if eta.shape() != (u, r) || omega1.shape() != (u, u) || omega0.shape() != (p - u, p - u) {
            return Err(SpeError::DimensionError(format!(
                "expected η {u}x{r}, Ω₁ {u}x{u}, Ω₀ {q}x{q}; got {:?}, {:?}, {:?}",
                eta.shape(),
                omega1.shape(),
                omega0.shape(),
                q = p - u
            )));
        }
        Ok(Self { sigma_ygx, eta, basis, omega1, omega0 })
    }

    pub fn from_fit(fit: &SpeFit<T>) -> Self {
        Self {
            sigma_ygx: fit.sigma_ygx.clone(),
            eta: fit.eta.clone(),
            basis: fit.basis.clone(),
            omega1: fit.omega1.clone(),
            omega0: fit.omega0.clone(),
        }
    }

    pub fn p(&self) -> usize {
        self.basis.p()
    }

    pub fn r(&self) -> usize {
        self.sigma_ygx.nrows()
    }

    pub fn u(&self) -> usize {
        self.basis.u()
    }

    pub fn sigma_x(&self) -> DMatrix<T> {
        let g1 = &self.basis.gamma1;
        let g0 = &self.basis.gamma0;
        symmetrize(&(g1 * &self.omega1 * g1.transpose() + g0 * &self.omega0 * g0.transpose()))
    }

    pub fn beta(&self) -> DMatrix<T> {
        &self.basis.gamma1 * &self.eta
    }

    /// `[vech Σ_{Y|X}; vec η; vec Γ₁; vech Ω₁; vech Ω₀]`.
    pub fn psi(&self) -> DVector<T> {
        let parts = [
            vech(&self.sigma_ygx),
            DVector::from_column_slice(self.eta.as_slice()),
            DVector::from_column_slice(self.basis.gamma1.as_slice()),
            vech(&self.omega1),
            vech(&self.omega0),
        ];
        concat(&parts)
    }

    /// `[vech Σ_{Y|X}; vech Σ_X; vec β]`.
    pub fn h(&self) -> DVector<T> {
        h_vector(&self.sigma_ygx, &self.sigma_x(), &self.beta())
    }
}

fn concat<T: Real>(parts: &[DVector<T>]) -> DVector<T> {
    let mut out = Vec::with_capacity(parts.iter().map(|v| v.len()).sum());
    for v in parts {
        out.extend_from_slice(v.as_slice());
    }
    DVector::from_vec(out)
}

pub(crate) fn h_vector<T: Real>(sigma_ygx: &DMatrix<T>, sigma_x: &DMatrix<T>, beta: &DMatrix<T>) -> DVector<T> {
    concat(&[vech(sigma_ygx), vech(sigma_x), DVector::from_column_slice(beta.as_slice())])
}

/// The map `ψ → h(ψ)` around a reference point. `Γ₀` follows `Γ₁` as
/// `(I − Γ₁(Γ₁ᵀΓ₁)⁻¹Γ₁ᵀ)Γ₀_ref`, which is exact at the reference point and
/// has the right first derivative.
struct HMap<T: Real> {
    p: usize,
    r: usize,
    u: usize,
    gamma0_ref: DMatrix<T>,
}

impl<T: Real> HMap<T> {
    fn eval(&self, psi: &DVector<T>) -> Option<DVector<T>> {
        let (p, r, u) = (self.p, self.r, self.u);
        let mut at = 0;
        let mut take = |len: usize| {
            let s = &psi.as_slice()[at..at + len];
            at += len;
            s
        };
        let sigma = unvech(take(r * (r + 1) / 2), r);
        let eta = DMatrix::from_column_slice(u, r, take(u * r));
        let g1 = DMatrix::from_column_slice(p, u, take(p * u));
        let om1 = unvech(take(u * (u + 1) / 2), u);
        let om0 = unvech(take((p - u) * (p - u + 1) / 2), p - u);
        let g0 = if u == 0 {
            self.gamma0_ref.clone()
        } else {
            let gtg = (g1.transpose() * &g1).try_inverse()?;
            let q = DMatrix::<T>::identity(p, p) - &g1 * gtg * g1.transpose();
            q * &self.gamma0_ref
        };
        let sigma_x = &g1 * om1 * g1.transpose() + &g0 * om0 * g0.transpose();
        Some(h_vector(&sigma, &symmetrize(&sigma_x), &(&g1 * eta)))
    }
}

/// Step for the fourth-order central-difference stencil.
fn fd_step<T: Real>() -> T {
    T::default_epsilon().powf(T::lit(0.2)).max(T::lit(1e-3))
}

/// Jacobian `∂h/∂ψ` by fourth-order central differences.
pub fn h_jacobian<T: Real>(params: &StructuralParams<T>) -> Result<DMatrix<T>> {
    let map = HMap { p: params.p(), r: params.r(), u: params.u(), gamma0_ref: params.basis.gamma0.clone() };
    let psi = params.psi();
    let h0 = params.h();
    let step = fd_step::<T>();
    let mut jac = DMatrix::zeros(h0.len(), psi.len());
    let twelve = T::lit(12.0);
    let eight = T::lit(8.0);
    for j in 0..psi.len() {
        let hj = step * (T::one() + psi[j].abs());
        let at = |k: T| {
            let mut x = psi.clone();
            x[j] += hj * k;
            map.eval(&x)
        };
        let (Some(f2), Some(f1), Some(m1), Some(m2)) = (at(T::lit(2.0)), at(T::one()), at(-T::one()), at(T::lit(-2.0)))
        else {
            return Err(SpeError::SingularInformation("Γ₁ lost full column rank while differentiating".into()));
        };
        let col = ((&f1 - &m1) * eight - (&f2 - &m2)) / (twelve * hj);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Fisher information of `h = [vech Σ_{Y|X}; vech Σ_X; vec β]` under the full model:
/// `blockdiag(½E_rᵀ(Σ_{Y|X}⁻¹⊗Σ_{Y|X}⁻¹)E_r, ½E_pᵀ(Σ_X⁻¹⊗Σ_X⁻¹)E_p, Σ_{Y|X}⁻¹⊗Σ_X)`.
pub fn fisher_full<T: Real>(sigma_ygx: &DMatrix<T>, sigma_x: &DMatrix<T>) -> Result<DMatrix<T>> {
    let r = sigma_ygx.nrows();
    let p = sigma_x.nrows();
    let si = spd_inverse(sigma_ygx, "Σ_{Y|X}").map_err(|e| SpeError::SingularInformation(e.to_string()))?;
    let xi = spd_inverse(sigma_x, "Σ_X").map_err(|e| SpeError::SingularInformation(e.to_string()))?;
    let half = T::lit(0.5);
    let er = duplication_matrix::<T>(r);
    let ep = duplication_matrix::<T>(p);
    let j_s = er.transpose() * kron(&si, &si) * &er * half;
    let j_x = ep.transpose() * kron(&xi, &xi) * &ep * half;
    let j_b = kron(&si, sigma_x);
    let (a, b, c) = (j_s.nrows(), j_x.nrows(), j_b.nrows());
    let mut j = DMatrix::zeros(a + b + c, a + b + c);
    j.view_mut((0, 0), (a, a)).copy_from(&j_s);
    j.view_mut((a, a), (b, b)).copy_from(&j_x);
    j.view_mut((a + b, a + b), (c, c)).copy_from(&j_b);
    Ok(symmetrize(&j))
}

/// `J_F`, `H` and `J_SPE⁻¹ = H(HᵀJ_F H)†Hᵀ`.
#[derive(Debug, Clone)]
pub struct InformationMatrices<T: Real> {
    pub j_f: DMatrix<T>,
    pub h: DMatrix<T>,
    pub j_spe_inv: DMatrix<T>,
}

impl<T: Real> InformationMatrices<T> {
    /// Rows/columns of `vec β` inside `h`.
    pub fn beta_range(&self, p: usize, r: usize) -> std::ops::Range<usize> {
        let start = r * (r + 1) / 2 + p * (p + 1) / 2;
        start..start + p * r
    }

    /// The `vec β` block of `J_SPE⁻¹`.
    pub fn beta_block(&self, p: usize, r: usize) -> DMatrix<T> {
        let rg = self.beta_range(p, r);
        self.j_spe_inv.view((rg.start, rg.start), (rg.len(), rg.len())).into_owned()
    }
}

/// Singular values below this fraction of the largest are treated as zero.
pub const PINV_CUTOFF: f64 = 1e-10;

/// Asymptotic covariance of `√n h(ψ̂)` for the envelope model.
pub fn avar_all<T: Real>(params: &StructuralParams<T>) -> Result<InformationMatrices<T>> {
    let j_f = fisher_full(&params.sigma_ygx, &params.sigma_x())?;
    let h = h_jacobian(params)?;
    let core = symmetrize(&(h.transpose() * &j_f * &h));
    let core_pinv = pinv(&core, T::lit(PINV_CUTOFF));
    let j_spe_inv = symmetrize(&(&h * core_pinv * h.transpose()));
    Ok(InformationMatrices { j_f, h, j_spe_inv })
}

/// Closed form for the asymptotic covariance of `√n vec(β̂)`:
/// `Σ_{Y|X}⊗Γ₁Ω₁⁻¹Γ₁ᵀ + (ηᵀ⊗Γ₀)M⁻¹(η⊗Γ₀ᵀ)` with
/// `M = ηΣ_{Y|X}⁻¹ηᵀ⊗Ω₀ + Ω₁⊗Ω₀⁻¹ + Ω₁⁻¹⊗Ω₀ − 2I`.
///
/// At `u = 0` the coefficients are identically zero and so is their variance.
pub fn avar_beta<T: Real>(params: &StructuralParams<T>) -> Result<DMatrix<T>> {
    let (p, r, u) = (params.p(), params.r(), params.u());
    if u == 0 {
        return Ok(DMatrix::zeros(p * r, p * r));
    }
    let g1 = &params.basis.gamma1;
    let g0 = &params.basis.gamma0;
    let sing = |e: SpeError| SpeError::SingularInformation(e.to_string());
    let om1_inv = spd_inverse(&params.omega1, "Ω₁").map_err(sing)?;
    let first = kron(&params.sigma_ygx, &(g1 * &om1_inv * g1.transpose()));
    if u == p {
        return Ok(symmetrize(&first));
    }
    let om0_inv = spd_inverse(&params.omega0, "Ω₀").map_err(sing)?;
    let s_inv = spd_inverse(&params.sigma_ygx, "Σ_{Y|X}").map_err(sing)?;
    let eta = &params.eta;
    let m = kron(&(eta * s_inv * eta.transpose()), &params.omega0)
        + kron(&params.omega1, &om0_inv)
        + kron(&om1_inv, &params.omega0)
        - DMatrix::identity(u * (p - u), u * (p - u)) * T::lit(2.0);
    let m = symmetrize(&m);
    let m_inv = m
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| SpeError::SingularInformation("M is not positive definite".into()))?;
    let left = kron(&eta.transpose(), g0);
    let second = &left * m_inv * left.transpose();
    Ok(symmetrize(&(first + second)))
}

/// Coefficients, standard errors and Z-scores, each `p × r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable<T: Real> {
    pub beta: DMatrix<T>,
    pub se: DMatrix<T>,
    pub z: DMatrix<T>,
}

/// `β̂_ij / sqrt(avar_ij / n)`; a zero coefficient gets a zero score.
pub fn z_scores<T: Real>(fit: &SpeFit<T>, n: usize) -> Result<CoefficientTable<T>> {
    let params = StructuralParams::from_fit(fit);
    let av = avar_beta(&params)?;
    let (p, r) = (fit.p(), fit.r());
    let nn = T::from_count(n);
    let se = DMatrix::from_fn(p, r, |i, j| {
        let k = j * p + i;
        (av[(k, k)].max(T::zero()) / nn).sqrt()
    });
    let z = DMatrix::from_fn(p, r, |i, j| {
        let b = fit.beta[(i, j)];
        if b == T::zero() || se[(i, j)] == T::zero() {
            T::zero()
        } else {
            b / se[(i, j)]
        }
    });
    Ok(CoefficientTable { beta: fit.beta.clone(), se, z })
}

//! The profiled negative log-likelihood of the envelope model and its
//! unconstrained coordinate form.

use nalgebra::DMatrix;

use crate::dataset::SpatialDataset;
use crate::envelope::basis::CoordinateParam;
use crate::error::{Result, SpeError};
use crate::gls::{CorrelationKind, Moments, ProfileEvaluator};
use crate::linalg::{spd_inverse, spd_log_det};
use crate::scalar::Real;
use crate::spatial::CorrelationParams;

/// Everything the objective needs at one value of the correlation parameters.
#[derive(Debug, Clone)]
pub(crate) struct ObjectiveTerms<T: Real> {
    pub n: usize,
    pub p: usize,
    pub s_x: DMatrix<T>,
    pub s_x_given_y: DMatrix<T>,
    pub s_x_inv: DMatrix<T>,
    pub log_det_s_x: T,
    pub log_det_s_y: T,
    pub log_det_rho: T,
    pub k: usize,
}

impl<T: Real> ObjectiveTerms<T> {
    pub fn from_moments(m: &Moments<T>) -> Result<Self> {
        let s_x = m.s_x()?;
        let s_y = m.s_y()?;
        let s_x_given_y = m.s_x_given_y()?;
        Ok(Self {
            n: m.n,
            p: m.p,
            s_x_inv: spd_inverse(&s_x, "S_X")?,
            log_det_s_x: spd_log_det(&s_x, "S_X")?,
            log_det_s_y: spd_log_det(&s_y, "S_Y")?,
            log_det_rho: m.log_det_rho,
            k: m.r + m.p,
            s_x,
            s_x_given_y,
        })
    }

    /// `n log|S_X| + n log|S_Y| + (r+p) log|ρ|`, the part free of `G₁`.
    pub fn constant(&self) -> T {
        let n = T::from_count(self.n);
        n * (self.log_det_s_x + self.log_det_s_y) + T::from_count(self.k) * self.log_det_rho
    }

    /// Objective at an orthonormal `p × u` basis.
    pub fn value_orthonormal(&self, g1: &DMatrix<T>) -> Result<T> {
        if g1.ncols() == 0 {
            return Ok(self.constant());
        }
        let n = T::from_count(self.n);
        let a = spd_log_det(&(g1.transpose() * &self.s_x_given_y * g1), "G₁ᵀS_{X|Y}G₁")?;
        let b = spd_log_det(&(g1.transpose() * &self.s_x_inv * g1), "G₁ᵀS_X⁻¹G₁")?;
        Ok(n * (a + b) + self.constant())
    }

    /// Coordinate form at `C` (original row order):
    /// `n log|CᵀS_{X|Y}C| + n log|CᵀS_X⁻¹C| − 2n log|CᵀC| + constant`.
    pub fn value_coords(&self, c: &DMatrix<T>) -> Result<T> {
        Ok(self.value_and_dc(c, false)?.0 + self.constant())
    }

    /// Value of the `C`-dependent part and, optionally, its gradient with respect to `C`.
    fn value_and_dc(&self, c: &DMatrix<T>, grad: bool) -> Result<(T, Option<DMatrix<T>>)> {
        let n = T::from_count(self.n);
        let ct = c.transpose();
        let m1c = &self.s_x_given_y * c;
        let m2c = &self.s_x_inv * c;
        let a1 = &ct * &m1c;
        let a2 = &ct * &m2c;
        let a3 = &ct * c;
        let mut value = T::zero();
        let mut invs = Vec::with_capacity(3);
        for (m, w, name) in [(&a1, T::one(), "CᵀS_{X|Y}C"), (&a2, T::one(), "CᵀS_X⁻¹C"), (&a3, T::lit(-2.0), "CᵀC")] {
            let chol = m
                .clone()
                .cholesky()
                .ok_or_else(|| SpeError::SingularCovariance(format!("{name} is not positive definite")))?;
            value += w * crate::linalg::chol_log_det(chol.l_dirty());
            if grad {
                invs.push(chol.inverse());
            }
        }
        let value = n * value;
        if !grad {
            return Ok((value, None));
        }
        let two_n = n * T::lit(2.0);
        let g = (m1c * &invs[0] + m2c * &invs[1] - c * &invs[2] * T::lit(2.0)) * two_n;
        Ok((value, Some(g)))
    }

    /// Objective (full, including the constant) and its gradient with respect to `vec(A)`.
    pub fn value_grad_a(&self, coord: &CoordinateParam<T>) -> Result<(T, DMatrix<T>)> {
        let c = coord.c_a_original();
        let (v, g) = self.value_and_dc(&c, true)?;
        let g = g.expect("gradient requested");
        let u = coord.u();
        let p = coord.p();
        let ga = DMatrix::from_fn(p - u, u, |i, j| g[(coord.row_order[u + i], j)]);
        Ok((v + self.constant(), ga))
    }
}

pub(crate) fn terms_at<T: Real>(data: &SpatialDataset<T>, phi: &CorrelationParams<T>) -> Result<ObjectiveTerms<T>> {
    ObjectiveTerms::from_moments(&ProfileEvaluator::new(data, CorrelationKind::Spatial).moments(phi)?)
}

fn check_basis_shape<T: Real>(data: &SpatialDataset<T>, rows: usize, cols: usize) -> Result<()> {
    if rows != data.p() || cols > data.p() {
        return Err(SpeError::DimensionError(format!("basis is {rows}x{cols} but p = {}", data.p())));
    }
    Ok(())
}

/// `n log|G₁ᵀS_{X|Y}G₁| + n log|G₁ᵀS_X⁻¹G₁| + n log|S_X| + n log|S_Y| + (r+p) log|ρ|`
/// at orthonormal `g1` and correlation parameters `phi`.
pub fn spe_objective<T: Real>(data: &SpatialDataset<T>, g1: &DMatrix<T>, phi: &CorrelationParams<T>) -> Result<T> {
    check_basis_shape(data, g1.nrows(), g1.ncols())?;
    terms_at(data, phi)?.value_orthonormal(g1)
}

/// The same objective in the unconstrained coordinates `A`.
pub fn spe_objective_unconstrained<T: Real>(
    data: &SpatialDataset<T>,
    coord: &CoordinateParam<T>,
    phi: &CorrelationParams<T>,
) -> Result<T> {
    check_basis_shape(data, coord.p(), coord.u())?;
    let terms = terms_at(data, phi)?;
    if coord.u() == 0 {
        return Ok(terms.constant());
    }
    terms.value_coords(&coord.c_a_original())
}

//! Full (unreduced) spatial regression.
//!
//! Every adjusted cross-product is a Schur complement of the whitened Gram
//! matrix `G = [1 Y X]ᵀ ρ(φ)⁻¹ [1 Y X]`, so one Cholesky factorization of
//! `ρ(φ)` serves all of them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::SpatialDataset;
use crate::envelope::EnvelopeBasis;
use crate::error::{Result, SpeError};
use crate::linalg::{kron, spd_inverse, spd_log_det, spd_solve, symmetrize};
use crate::optim::{nelder_mead, OptimOptions};
use crate::scalar::Real;
use crate::spatial::{correlation_from_distances, CorrelationFactor, CorrelationParams};

/// Whether observations are spatially correlated or treated as independent.
///
/// `Independent` fixes `ρ = I` (equivalently `tau = 1`) and does not estimate
/// the correlation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CorrelationKind {
    #[default]
    Spatial,
    Independent,
}

impl CorrelationKind {
    /// Number of correlation parameters estimated under this kind.
    pub fn param_count(self) -> usize {
        match self {
            CorrelationKind::Spatial => 2,
            CorrelationKind::Independent => 0,
        }
    }

    pub(crate) fn fixed_theta<T: Real>(self) -> Option<CorrelationParams<T>> {
        match self {
            CorrelationKind::Spatial => None,
            CorrelationKind::Independent => Some(CorrelationParams { tau: T::one(), lambda: T::one() }),
        }
    }
}

/// `S_X(φ)`, `S_Y(φ)` and `S_{X|Y}(φ)`; unnormalized (no division by `n`).
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedCovariances<T: Real> {
    pub s_x: DMatrix<T>,
    pub s_y: DMatrix<T>,
    pub s_x_given_y: DMatrix<T>,
}

/// Whitened Gram matrix and log-determinant at one value of the correlation parameters.
#[derive(Debug, Clone)]
pub(crate) struct Moments<T: Real> {
    pub n: usize,
    pub r: usize,
    pub p: usize,
    pub gram: DMatrix<T>,
    pub log_det_rho: T,
}

impl<T: Real> Moments<T> {
    pub fn from_factor(data: &SpatialDataset<T>, factor: &CorrelationFactor<T>) -> Self {
        let w = factor.whiten(&data.stacked());
        Self::from_parts(data, w.transpose() * &w, factor.log_det())
    }

    pub fn identity(data: &SpatialDataset<T>) -> Self {
        let d = data.stacked();
        Self::from_parts(data, d.transpose() * &d, T::zero())
    }

    fn from_parts(data: &SpatialDataset<T>, gram: DMatrix<T>, log_det_rho: T) -> Self {
        Self { n: data.n(), r: data.r(), p: data.p(), gram: symmetrize(&gram), log_det_rho }
    }

    fn y_idx(&self) -> Vec<usize> {
        (1..1 + self.r).collect()
    }

    fn x_idx(&self) -> Vec<usize> {
        (1 + self.r..1 + self.r + self.p).collect()
    }

    fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<T> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.gram[(rows[i], cols[j])])
    }

    /// `G_ab − G_aC G_CC⁻¹ G_Cb`.
    fn residual_cross(&self, a: &[usize], b: &[usize], cond: &[usize], what: &str) -> Result<DMatrix<T>> {
        let gcc = self.block(cond, cond);
        let gcb = self.block(cond, b);
        let gac = self.block(a, cond);
        let sol = spd_solve(&gcc, &gcb, what)?;
        Ok(self.block(a, b) - gac * sol)
    }

    pub fn s_x(&self) -> Result<DMatrix<T>> {
        let x = self.x_idx();
        Ok(symmetrize(&self.residual_cross(&x, &x, &[0], "1ᵀρ⁻¹1")?))
    }

    pub fn s_y(&self) -> Result<DMatrix<T>> {
        let y = self.y_idx();
        Ok(symmetrize(&self.residual_cross(&y, &y, &[0], "1ᵀρ⁻¹1")?))
    }

    /// Centered cross-product `p × r`.
    pub fn s_xy(&self) -> Result<DMatrix<T>> {
        self.residual_cross(&self.x_idx(), &self.y_idx(), &[0], "1ᵀρ⁻¹1")
    }

    pub fn s_x_given_y(&self) -> Result<DMatrix<T>> {
        let x = self.x_idx();
        let mut ytil = vec![0];
        ytil.extend(self.y_idx());
        Ok(symmetrize(&self.residual_cross(&x, &x, &ytil, "Ỹᵀρ⁻¹Ỹ")?))
    }

    /// Centered joint cross-product of `Z = [Y X]`.
    pub fn s_z(&self) -> Result<DMatrix<T>> {
        let z: Vec<usize> = (1..1 + self.r + self.p).collect();
        Ok(symmetrize(&self.residual_cross(&z, &z, &[0], "1ᵀρ⁻¹1")?))
    }

    /// GLS intercept and coefficients `(X̃ᵀρ⁻¹X̃)⁻¹X̃ᵀρ⁻¹Y`.
    pub fn gls(&self) -> Result<(DVector<T>, DMatrix<T>)> {
        let mut xt = vec![0];
        xt.extend(self.x_idx());
        let b = spd_solve(&self.block(&xt, &xt), &self.block(&xt, &self.y_idx()), "X̃ᵀρ⁻¹X̃")?;
        let mu = b.row(0).transpose();
        let beta = b.rows(1, self.p).into_owned();
        Ok((mu, beta))
    }

    /// Generalized-least-squares means `(μ_Y, μ_X)`.
    pub fn means(&self) -> (DVector<T>, DVector<T>) {
        let g11 = self.gram[(0, 0)];
        let mu_y = DVector::from_fn(self.r, |i, _| self.gram[(0, 1 + i)] / g11);
        let mu_x = DVector::from_fn(self.p, |i, _| self.gram[(0, 1 + self.r + i)] / g11);
        (mu_y, mu_x)
    }

    pub fn adjusted(&self) -> Result<AdjustedCovariances<T>> {
        Ok(AdjustedCovariances { s_x: self.s_x()?, s_y: self.s_y()?, s_x_given_y: self.s_x_given_y()? })
    }
}

/// Evaluates adjusted moments for one dataset at many correlation parameters,
/// reusing the distance matrix.
#[derive(Debug, Clone)]
pub(crate) struct ProfileEvaluator<'a, T: Real> {
    pub data: &'a SpatialDataset<T>,
    pub kind: CorrelationKind,
    dist: DMatrix<T>,
}

impl<'a, T: Real> ProfileEvaluator<'a, T> {
    pub fn new(data: &'a SpatialDataset<T>, kind: CorrelationKind) -> Self {
        let dist = match kind {
            CorrelationKind::Spatial => data.sites.distances(),
            CorrelationKind::Independent => DMatrix::zeros(0, 0),
        };
        Self { data, kind, dist }
    }

    pub fn moments(&self, phi: &CorrelationParams<T>) -> Result<Moments<T>> {
        match self.kind {
            CorrelationKind::Independent => Ok(Moments::identity(self.data)),
            CorrelationKind::Spatial => {
                if phi.tau == T::one() {
                    return Ok(Moments::identity(self.data));
                }
                let factor = CorrelationFactor::from_matrix(correlation_from_distances(&self.dist, phi))?;
                Ok(Moments::from_factor(self.data, &factor))
            }
        }
    }

    pub fn diameter(&self) -> T {
        self.dist.iter().fold(T::zero(), |a, &b| a.max(b))
    }
}

/// Profiled maximum log-likelihood from the minimized objective
/// `n log|S_Z| + (r+p) log|ρ|` (or its envelope-constrained counterpart).
pub fn loglik_from_objective<T: Real>(objective: T, n: usize, k: usize) -> T {
    let nk = T::from_count(n * k);
    let half = T::lit(0.5);
    let two_pi = T::two_pi();
    -half * objective + half * nk * T::from_count(n).ln() - half * nk * (two_pi.ln() + T::one())
}

/// `S_X`, `S_Y`, `S_{X|Y}` at `phi`.
pub fn adjusted_covariances<T: Real>(data: &SpatialDataset<T>, phi: &CorrelationParams<T>) -> Result<AdjustedCovariances<T>> {
    ProfileEvaluator::new(data, CorrelationKind::Spatial).moments(phi)?.adjusted()
}

/// GLS intercept (`r`-vector) and coefficients (`p × r`) at `theta`.
pub fn gls_coefficients<T: Real>(data: &SpatialDataset<T>, theta: &CorrelationParams<T>) -> Result<(DVector<T>, DMatrix<T>)> {
    if data.n() < data.p() + 1 {
        return Err(SpeError::RankDeficiency(format!("n = {} < p + 1 = {}", data.n(), data.p() + 1)));
    }
    ProfileEvaluator::new(data, CorrelationKind::Spatial).moments(theta)?.gls()
}

/// Maximum-likelihood fit of the full joint model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlsFit<T: Real> {
    pub mu_ygx: DVector<T>,
    pub beta: DMatrix<T>,
    pub sigma_ygx: DMatrix<T>,
    pub mu_x: DVector<T>,
    pub mu_y: DVector<T>,
    pub theta: CorrelationParams<T>,
    pub kind: CorrelationKind,
    pub n: usize,
    pub objective: T,
    pub loglik: T,
    pub param_count: usize,
    pub aic: T,
    pub bic: T,
}

/// `n log|S_Z(φ)| + (r+p) log|ρ(φ)|`.
pub(crate) fn full_objective<T: Real>(m: &Moments<T>) -> Result<T> {
    let n = T::from_count(m.n);
    let k = T::from_count(m.r + m.p);
    Ok(n * spd_log_det(&m.s_z()?, "S_Z")? + k * m.log_det_rho)
}

pub(crate) fn check_sample_size<T: Real>(data: &SpatialDataset<T>) -> Result<()> {
    let need = data.p() + data.r() + 1;
    if data.n() <= need {
        return Err(SpeError::RankDeficiency(format!("n = {} must exceed p + r + 1 = {need}", data.n())));
    }
    Ok(())
}

/// Minimizes a function of the correlation parameters over `(logit tau, log lambda)`:
/// a coarse grid picks the start, then restarted Nelder–Mead polishes it.
pub(crate) fn minimize_over_theta<T: Real, F>(
    mut objective: F,
    diameter: T,
    start: Option<CorrelationParams<T>>,
    opts: &OptimOptions,
) -> Result<(CorrelationParams<T>, T)>
where
    F: FnMut(&CorrelationParams<T>) -> Result<T>,
{
    let mut eval = |z: &DVector<T>| {
        let th = CorrelationParams::from_unconstrained([z[0], z[1]]);
        objective(&th).unwrap_or(T::infinity())
    };
    let x0 = match start {
        Some(th) => {
            let z = th.to_unconstrained();
            DVector::from_vec(vec![z[0], z[1]])
        }
        None => {
            let scale = if diameter > T::zero() { diameter } else { T::one() };
            let mut best = (T::infinity(), DVector::from_vec(vec![T::zero(), (scale * T::lit(0.3)).ln()]));
            for &lt in &[-3.0, -1.0, 1.0, 3.0] {
                for &frac in &[0.03, 0.1, 0.3, 1.0] {
                    let z = DVector::from_vec(vec![T::lit(lt), (scale * T::lit(frac)).ln()]);
                    let v = eval(&z);
                    if v < best.0 {
                        best = (v, z);
                    }
                }
            }
            best.1
        }
    };
    let tol = T::tol_floor(opts.tol, 100.0);
    let res = nelder_mead(&mut eval, &x0, T::lit(0.5), opts.theta_max_evals, tol);
    if !res.f.is_finite() {
        return Err(SpeError::OptimFailure("no feasible correlation parameters found".into()));
    }
    if !res.converged {
        return Err(SpeError::OptimFailure(format!(
            "correlation search did not converge within {} evaluations",
            opts.theta_max_evals
        )));
    }
    Ok((CorrelationParams::from_unconstrained([res.x[0], res.x[1]]), res.f))
}

/// Fits the full spatial regression by profile maximum likelihood over `(tau, lambda)`.
pub fn fit_full_model<T: Real>(data: &SpatialDataset<T>, opts: &OptimOptions) -> Result<GlsFit<T>> {
    fit_full_model_kind(data, CorrelationKind::Spatial, opts)
}

pub fn fit_full_model_kind<T: Real>(data: &SpatialDataset<T>, kind: CorrelationKind, opts: &OptimOptions) -> Result<GlsFit<T>> {
    check_sample_size(data)?;
    let eval = ProfileEvaluator::new(data, kind);
    let (theta, objective) = match kind.fixed_theta() {
        Some(th) => (th, full_objective(&eval.moments(&th)?)?),
        None => minimize_over_theta(|th| full_objective(&eval.moments(th)?), eval.diameter(), None, opts)?,
    };
    gls_fit_at(&eval, theta, objective)
}

pub(crate) fn gls_fit_at<T: Real>(eval: &ProfileEvaluator<'_, T>, theta: CorrelationParams<T>, objective: T) -> Result<GlsFit<T>> {
    let data = eval.data;
    let m = eval.moments(&theta)?;
    let (mu_ygx, beta) = m.gls()?;
    let (mu_y, mu_x) = m.means();
    let s_x = m.s_x()?;
    let s_xy = m.s_xy()?;
    let nn = T::from_count(data.n());
    let resid = m.s_y()? - s_xy.transpose() * spd_solve(&s_x, &s_xy, "S_X")?;
    let sigma_ygx = symmetrize(&resid) / nn;
    let (n, r, p) = (data.n(), data.r(), data.p());
    let loglik = loglik_from_objective(objective, n, r + p);
    let param_count = envelope_param_count(p, r, p, eval.kind);
    let (aic, bic) = information_criteria(loglik, param_count, n);
    Ok(GlsFit { mu_ygx, beta, sigma_ygx, mu_x, mu_y, theta, kind: eval.kind, n, objective, loglik, param_count, aic, bic })
}

/// Means + `Σ_{Y|X}` + `η` + `Ω₁` + `Ω₀` + Grassmann dimension + correlation parameters.
pub fn envelope_param_count(p: usize, r: usize, u: usize, kind: CorrelationKind) -> usize {
    (p + r) + r * (r + 1) / 2 + u * r + u * (u + 1) / 2 + (p - u) * (p - u + 1) / 2 + u * (p - u) + kind.param_count()
}

/// `(AIC, BIC)`.
pub fn information_criteria<T: Real>(loglik: T, param_count: usize, n: usize) -> (T, T) {
    let k = T::from_count(param_count);
    let two = T::lit(2.0);
    (-two * loglik + two * k, -two * loglik + k * T::from_count(n).ln())
}

/// Finite-sample variances of `vec(β̂)` when the envelope basis and `θ` are known:
/// `(Σ_{Y|X} ⊗ Γ₁Ω₁⁻¹Γ₁ᵀ)/(n−u−2)` for the envelope estimator and
/// `(Σ_{Y|X} ⊗ Σ_X⁻¹)/(n−p−2)` for GLS.
///
/// Also checks the rearrangement
/// `var_spe = (n−p−2)/(n−u−2)·var_gls − (Σ_{Y|X} ⊗ Γ₀Ω₀⁻¹Γ₀ᵀ)/(n−u−2)`.
pub fn known_theta_variances<T: Real>(
    basis: &EnvelopeBasis<T>,
    omega1: &DMatrix<T>,
    omega0: &DMatrix<T>,
    sigma_ygx: &DMatrix<T>,
    n: usize,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let p = basis.p();
    let u = basis.u();
    if omega1.nrows() != u || omega1.ncols() != u || omega0.nrows() != p - u || omega0.ncols() != p - u {
        return Err(SpeError::DimensionError(format!("Ω₁ must be {u}x{u} and Ω₀ {}x{}", p - u, p - u)));
    }
    if sigma_ygx.nrows() != sigma_ygx.ncols() || sigma_ygx.nrows() == 0 {
        return Err(SpeError::DimensionError("Σ_{Y|X} must be square".into()));
    }
    if n <= p + 2 {
        return Err(SpeError::DimensionError(format!("need n > p + 2 (n = {n}, p = {p})")));
    }
    let g1 = &basis.gamma1;
    let g0 = &basis.gamma0;
    let env_inv = g1 * spd_inverse(omega1, "Ω₁")? * g1.transpose();
    let comp_inv = g0 * spd_inverse(omega0, "Ω₀")? * g0.transpose();
    let sigma_x = g1 * omega1 * g1.transpose() + g0 * omega0 * g0.transpose();
    let sigma_x_inv = spd_inverse(&sigma_x, "Σ_X")?;
    let du = T::from_count(n - u - 2);
    let dp = T::from_count(n - p - 2);
    let var_spe = kron(sigma_ygx, &env_inv) / du;
    let var_gls = kron(sigma_ygx, &sigma_x_inv) / dp;
    let rearranged = &var_gls * (dp / du) - kron(sigma_ygx, &comp_inv) / du;
    let scale = var_gls.amax().max(T::default_epsilon());
    let gap = (&rearranged - &var_spe).amax();
    if gap > T::tol_floor(1e-10, 1e3) * scale.max(T::one()) {
        return Err(SpeError::SingularCovariance(format!(
            "variance rearrangement identity violated by {gap}; Ω₁/Ω₀ ill-conditioned"
        )));
    }
    Ok((var_spe, var_gls))
}

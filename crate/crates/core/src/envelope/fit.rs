//! Maximum-likelihood fitting of the spatial predictor envelope at a fixed dimension.
//!
//! The coordinates `A` of the envelope are profiled out for each value of the
//! correlation parameters: the inner problem (quasi-Newton on `vec A` with an
//! analytic gradient) only touches `p × p` matrices, while every outer step
//! over `(logit tau, log lambda)` costs one factorization of `ρ`. The outer
//! search is quasi-Newton with central-difference gradients and falls back to
//! the simplex method if its line search fails.

use std::cell::RefCell;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::SpatialDataset;
use crate::envelope::basis::{recover_basis, CoordinateParam, EnvelopeBasis};
use crate::envelope::objective::ObjectiveTerms;
use crate::error::{Result, SpeError};
use crate::gls::{
    check_sample_size, envelope_param_count, gls_fit_at, information_criteria, loglik_from_objective,
    minimize_over_theta, CorrelationKind, GlsFit, ProfileEvaluator,
};
use crate::linalg::{min_eigenvalue, orthonormalize, symmetrize};
use crate::optim::{bfgs, central_diff_gradient, nelder_mead, BfgsStop, OptimOptions};
use crate::scalar::Real;
use crate::simulation::random_orthobasis_with;
use crate::spatial::{rng_for, CorrelationParams};

/// Fitted spatial predictor envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeFit<T: Real> {
    pub basis: EnvelopeBasis<T>,
    /// `u × r` coordinates of `β` in the `Γ₁` basis.
    pub eta: DMatrix<T>,
    pub omega1: DMatrix<T>,
    pub omega0: DMatrix<T>,
    /// `p × r`, equal to `Γ₁η`.
    pub beta: DMatrix<T>,
    pub mu_ygx: DVector<T>,
    pub mu_x: DVector<T>,
    pub mu_y: DVector<T>,
    pub sigma_ygx: DMatrix<T>,
    pub theta: CorrelationParams<T>,
    pub kind: CorrelationKind,
    pub u: usize,
    pub n: usize,
    /// Minimized objective (the negative profile log-likelihood up to scale and constant).
    pub objective: T,
    pub loglik: T,
    pub aic: T,
    pub bic: T,
    pub param_count: usize,
}

impl<T: Real> SpeFit<T> {
    pub fn p(&self) -> usize {
        self.beta.nrows()
    }

    pub fn r(&self) -> usize {
        self.beta.ncols()
    }
}

/// Fits the envelope model of dimension `u` with spatially correlated errors.
pub fn fit_spe<T: Real>(data: &SpatialDataset<T>, u: usize, opts: &OptimOptions) -> Result<SpeFit<T>> {
    fit_spe_kind(data, u, CorrelationKind::Spatial, opts)
}

/// As [`fit_spe`], choosing between spatial and independent errors.
pub fn fit_spe_kind<T: Real>(data: &SpatialDataset<T>, u: usize, kind: CorrelationKind, opts: &OptimOptions) -> Result<SpeFit<T>> {
    check_dims(data, u)?;
    let full = crate::gls::fit_full_model_kind(data, kind, opts)?;
    fit_spe_from_full(data, u, kind, &full, opts)
}

fn check_dims<T: Real>(data: &SpatialDataset<T>, u: usize) -> Result<()> {
    if u > data.p() {
        return Err(SpeError::DimensionError(format!("u = {u} exceeds p = {}", data.p())));
    }
    check_sample_size(data)
}

/// Fits at dimension `u` starting from an existing full-model fit (whose
/// correlation parameters seed the search).
pub fn fit_spe_from_full<T: Real>(
    data: &SpatialDataset<T>,
    u: usize,
    kind: CorrelationKind,
    full: &GlsFit<T>,
    opts: &OptimOptions,
) -> Result<SpeFit<T>> {
    check_dims(data, u)?;
    let eval = ProfileEvaluator::new(data, kind);
    let p = data.p();
    let theta_start = full.theta;
    let (basis, theta) = if u == p {
        (EnvelopeBasis { gamma1: DMatrix::identity(p, p), gamma0: DMatrix::zeros(p, 0) }, theta_start)
    } else if u == 0 {
        let theta = match kind.fixed_theta() {
            Some(th) => th,
            None => {
                let obj = |th: &CorrelationParams<T>| ObjectiveTerms::from_moments(&eval.moments(th)?).map(|t| t.constant());
                minimize_over_theta(obj, eval.diameter(), Some(theta_start), opts)?.0
            }
        };
        (EnvelopeBasis { gamma1: DMatrix::zeros(p, 0), gamma0: DMatrix::identity(p, p) }, theta)
    } else {
        optimize_joint(&eval, u, theta_start, opts)?
    };
    envelope_estimates_with(&eval, &basis, theta)
}

/// Start bases at fixed terms, deterministic ones first.
fn start_bases<T: Real>(terms: &ObjectiveTerms<T>, beta: &DMatrix<T>, u: usize, opts: &OptimOptions) -> Vec<DMatrix<T>> {
    let p = terms.p;
    let mut starts = Vec::new();
    let eig_x = symmetrize(&terms.s_x).symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig_x.eigenvalues[b].partial_cmp(&eig_x.eigenvalues[a]).unwrap_or(std::cmp::Ordering::Equal));
    let top = |vecs: &DMatrix<T>, idx: &[usize]| -> DMatrix<T> {
        let mut m = DMatrix::zeros(p, idx.len());
        for (c, &k) in idx.iter().enumerate() {
            m.set_column(c, &vecs.column(k));
        }
        m
    };
    // Leading eigenvectors of S_X.
    starts.push(top(&eig_x.eigenvectors, &order[..u]));

    // Left singular vectors of the coefficient matrix, padded with leading
    // eigenvectors of S_X restricted to their complement.
    let svd = beta.clone().svd(true, false);
    if let Some(uu) = svd.u {
        let k = u.min(uu.ncols()).min(beta.ncols());
        let mut sv: Vec<usize> = (0..svd.singular_values.len()).collect();
        sv.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap_or(std::cmp::Ordering::Equal));
        let q = top(&uu, &sv[..k]);
        let m = if k < u {
            let proj = DMatrix::<T>::identity(p, p) - &q * q.transpose();
            let rest = symmetrize(&(&proj * &terms.s_x * &proj)).symmetric_eigen();
            let mut ro: Vec<usize> = (0..p).collect();
            ro.sort_by(|&a, &b| rest.eigenvalues[b].partial_cmp(&rest.eigenvalues[a]).unwrap_or(std::cmp::Ordering::Equal));
            let fill = top(&rest.eigenvectors, &ro[..u - k]);
            crate::envelope::basis::concat_columns(&q, &fill)
        } else {
            q
        };
        starts.push(orthonormalize(&m));
    }

    // Eigenvectors of S_X and of S_{X|Y}, ranked by their one-direction objective.
    let eig_xy = symmetrize(&terms.s_x_given_y).symmetric_eigen();
    for vecs in [&eig_x.eigenvectors, &eig_xy.eigenvectors] {
        let mut scored: Vec<(T, usize)> = (0..p)
            .map(|k| {
                let v = vecs.column(k);
                let a = (v.transpose() * &terms.s_x_given_y * v)[(0, 0)];
                let b = (v.transpose() * &terms.s_x_inv * v)[(0, 0)];
                ((a * b).ln(), k)
            })
            .collect();
        scored.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(std::cmp::Ordering::Equal));
        let idx: Vec<usize> = scored.iter().take(u).map(|s| s.1).collect();
        starts.push(top(vecs, &idx));
    }

    let mut rng = rng_for(opts.seed, 0x5eed_0000 + u as u64);
    for _ in 0..opts.random_starts {
        starts.push(random_orthobasis_with(p, u, &mut rng));
    }
    starts
}

/// Minimizes the objective over the subspace at fixed terms, from `start`.
pub(crate) fn optimize_basis<T: Real>(terms: &ObjectiveTerms<T>, start: &DMatrix<T>, max_evals: usize) -> Result<(DMatrix<T>, T)> {
    let u = start.ncols();
    let p = start.nrows();
    let mut g1 = orthonormalize(start);
    let mut evals = 0usize;
    let tol = T::tol_floor(1e-13, 10.0);
    for _chart in 0..4 {
        let coord = CoordinateParam::from_basis(&g1)?;
        let order = coord.row_order.clone();
        let fg = |z: &DVector<T>| {
            let c = CoordinateParam { a: DMatrix::from_column_slice(p - u, u, z.as_slice()), row_order: order.clone() };
            match terms.value_grad_a(&c) {
                Ok((v, g)) => (v, DVector::from_column_slice(g.as_slice())),
                Err(_) => (T::infinity(), DVector::zeros(z.len())),
            }
        };
        let z0 = DVector::from_column_slice(coord.a.as_slice());
        let res = bfgs(fg, &z0, max_evals.saturating_sub(evals).max(1), tol);
        evals += res.evals;
        let a = DMatrix::from_column_slice(p - u, u, res.x.as_slice());
        g1 = recover_basis(&CoordinateParam { a: a.clone(), row_order: order }).gamma1;
        // A stalled search in a badly conditioned chart is retried in a fresh one.
        let well_charted = a.amax() < T::lit(10.0);
        if res.stop == BfgsStop::Converged && well_charted {
            break;
        }
        if res.stop == BfgsStop::Budget || evals >= max_evals {
            break;
        }
    }
    let v = terms.value_orthonormal(&g1)?;
    Ok((g1, v))
}

fn best_over_starts<T: Real>(terms: &ObjectiveTerms<T>, starts: &[DMatrix<T>], opts: &OptimOptions) -> Option<(DMatrix<T>, T)> {
    let mut best: Option<(DMatrix<T>, T)> = None;
    for s in starts {
        match optimize_basis(terms, s, opts.max_evals) {
            Ok((g, v)) if v.is_finite() => {
                if best.as_ref().is_none_or(|b| v < b.1) {
                    best = Some((g, v));
                }
            }
            Ok(_) => {}
            Err(e) => debug!("start discarded: {e}"),
        }
    }
    best
}

/// Joint minimization over the subspace and the correlation parameters for `0 < u < p`.
fn optimize_joint<T: Real>(
    eval: &ProfileEvaluator<'_, T>,
    u: usize,
    theta_start: CorrelationParams<T>,
    opts: &OptimOptions,
) -> Result<(EnvelopeBasis<T>, CorrelationParams<T>)> {
    let m0 = eval.moments(&theta_start)?;
    let terms0 = ObjectiveTerms::from_moments(&m0)?;
    let (_, beta0) = m0.gls()?;
    let starts = start_bases(&terms0, &beta0, u, opts);
    let (g_init, _) = best_over_starts(&terms0, &starts, opts)
        .ok_or_else(|| SpeError::OptimFailure("no start produced a finite objective".into()))?;

    if let Some(th) = eval.kind.fixed_theta() {
        return Ok((EnvelopeBasis::from_gamma1(g_init)?, th));
    }

    let warm = RefCell::new(g_init);
    let evals = RefCell::new(0usize);
    let profile = |z: &DVector<T>| -> T {
        *evals.borrow_mut() += 1;
        let th = CorrelationParams::from_unconstrained([z[0], z[1]]);
        let terms = match eval.moments(&th).and_then(|m| ObjectiveTerms::from_moments(&m)) {
            Ok(t) => t,
            Err(_) => return T::infinity(),
        };
        let start = warm.borrow().clone();
        match optimize_basis(&terms, &start, opts.max_evals) {
            Ok((g, v)) if v.is_finite() => {
                *warm.borrow_mut() = g;
                v
            }
            _ => T::infinity(),
        }
    };

    let tol = T::tol_floor(opts.tol, 100.0);
    let h = T::tol_floor(1e-5, 1e3);
    let mut theta = theta_start;
    let mut best_f = T::infinity();
    for pass in 0..2 {
        let z0 = {
            let z = theta.to_unconstrained();
            DVector::from_vec(vec![z[0], z[1]])
        };
        let mut f = |z: &DVector<T>| profile(z);
        let fg = |z: &DVector<T>| {
            let v = profile(z);
            let mut ff = |w: &DVector<T>| profile(w);
            let g = central_diff_gradient(&mut ff, z, h);
            (v, g)
        };
        let res = bfgs(fg, &z0, opts.max_evals, tol);
        let (z_hat, f_hat) = match res.stop {
            BfgsStop::Converged => (res.x, res.f),
            BfgsStop::LineSearchFailed => {
                debug!("outer line search failed; falling back to the simplex method");
                let nm = nelder_mead(&mut f, &res.x, T::lit(0.25), opts.max_evals, tol);
                if !nm.converged {
                    return Err(SpeError::OptimFailure("simplex fallback did not converge".into()));
                }
                (nm.x, nm.f)
            }
            BfgsStop::Budget => {
                return Err(SpeError::OptimFailure(format!("envelope search exceeded {} evaluations", opts.max_evals)))
            }
        };
        if !f_hat.is_finite() {
            return Err(SpeError::OptimFailure("objective is not finite at the optimum".into()));
        }
        // Leave the warm start at the optimum itself.
        let _ = profile(&z_hat);
        theta = CorrelationParams::from_unconstrained([z_hat[0], z_hat[1]]);
        best_f = f_hat;
        if pass == 1 {
            break;
        }
        // Look for a better subspace at the new correlation parameters.
        let m = eval.moments(&theta)?;
        let terms = ObjectiveTerms::from_moments(&m)?;
        let (_, beta) = m.gls()?;
        let mut starts = start_bases(&terms, &beta, u, opts);
        starts.push(warm.borrow().clone());
        if let Some((g, v)) = best_over_starts(&terms, &starts, opts) {
            if v < f_hat - tol * (T::one() + f_hat.abs()) {
                debug!("restart at θ̂ improved the objective by {}", f_hat - v);
                *warm.borrow_mut() = g;
                continue;
            }
        }
        break;
    }
    debug!("envelope fit u={u}: objective {best_f} after {} profile evaluations", evals.borrow());
    let g1 = warm.into_inner();
    Ok((EnvelopeBasis::from_gamma1(g1)?, theta))
}

/// Closed-form remaining estimates at a given basis and correlation parameters
/// (spatially correlated errors).
pub fn envelope_estimates<T: Real>(
    data: &SpatialDataset<T>,
    basis: &EnvelopeBasis<T>,
    theta: CorrelationParams<T>,
) -> Result<SpeFit<T>> {
    check_sample_size(data)?;
    envelope_estimates_with(&ProfileEvaluator::new(data, CorrelationKind::Spatial), basis, theta)
}

pub(crate) fn envelope_estimates_with<T: Real>(
    eval: &ProfileEvaluator<'_, T>,
    basis: &EnvelopeBasis<T>,
    theta: CorrelationParams<T>,
) -> Result<SpeFit<T>> {
    let data = eval.data;
    let (n, r, p) = (data.n(), data.r(), data.p());
    let u = basis.u();
    if basis.p() != p {
        return Err(SpeError::DimensionError(format!("basis has {} rows but p = {p}", basis.p())));
    }
    let m = eval.moments(&theta)?;
    let terms = ObjectiveTerms::from_moments(&m)?;
    let objective = terms.value_orthonormal(&basis.gamma1)?;
    let nn = T::from_count(n);
    let (_, beta_gls) = m.gls()?;
    let (mu_y, mu_x) = m.means();
    let g1 = &basis.gamma1;
    let g0 = &basis.gamma0;
    let eta = g1.transpose() * &beta_gls;
    let beta = g1 * &eta;
    let omega1 = symmetrize(&(g1.transpose() * &terms.s_x * g1)) / nn;
    let omega0 = symmetrize(&(g0.transpose() * &terms.s_x * g0)) / nn;
    let s_y = m.s_y()?;
    let mu_ygx = &mu_y - beta.transpose() * &mu_x;

    let conditional = symmetrize(&(&s_y / nn - eta.transpose() * &omega1 * &eta));
    let sigma_ygx = if min_eigenvalue(&conditional) > T::zero() {
        conditional
    } else {
        // Residual cross-product of Y about the fitted envelope surface.
        warn!("Σ_Y − ηᵀΩ₁η is not positive definite; using the residual covariance instead");
        let s_xy = m.s_xy()?;
        let resid = &s_y - s_xy.transpose() * &beta - beta.transpose() * &s_xy + beta.transpose() * &terms.s_x * &beta;
        symmetrize(&resid) / nn
    };
    if u < p {
        let tr = omega0.trace();
        if min_eigenvalue(&omega0) < T::lit(1e-12) * tr {
            warn!("Ω₀ is nearly singular (u = {u})");
        }
    }
    let loglik = loglik_from_objective(objective, n, r + p);
    let param_count = envelope_param_count(p, r, u, eval.kind);
    let (aic, bic) = information_criteria(loglik, param_count, n);
    Ok(SpeFit {
        basis: basis.clone(),
        eta,
        omega1,
        omega0,
        beta,
        mu_ygx,
        mu_x,
        mu_y,
        sigma_ygx,
        theta,
        kind: eval.kind,
        u,
        n,
        objective,
        loglik,
        aic,
        bic,
        param_count,
    })
}

/// Full-model fit expressed as the `u = p` envelope (used when a caller has a
/// [`GlsFit`] but wants the envelope parameterization).
pub fn gls_as_envelope<T: Real>(data: &SpatialDataset<T>, full: &GlsFit<T>) -> Result<SpeFit<T>> {
    let eval = ProfileEvaluator::new(data, full.kind);
    let p = data.p();
    envelope_estimates_with(&eval, &EnvelopeBasis { gamma1: DMatrix::identity(p, p), gamma0: DMatrix::zeros(p, 0) }, full.theta)
}

/// Refits the full model at given correlation parameters (no search).
pub fn gls_fit_at_theta<T: Real>(data: &SpatialDataset<T>, theta: CorrelationParams<T>) -> Result<GlsFit<T>> {
    check_sample_size(data)?;
    let eval = ProfileEvaluator::new(data, CorrelationKind::Spatial);
    let m = eval.moments(&theta)?;
    let objective = crate::gls::full_objective(&m)?;
    gls_fit_at(&eval, theta, objective)
}

//! Derivative-free simplex and quasi-Newton minimizers.
//!
//! Both work on unconstrained parameter vectors and treat a non-finite
//! objective value as "infeasible" (worse than any finite value).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// User-facing optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimOptions {
    /// Evaluation budget for the joint envelope optimization.
    pub max_evals: usize,
    /// Evaluation budget for the two-parameter correlation search of the full model.
    pub theta_max_evals: usize,
    /// Relative objective-change tolerance.
    pub tol: f64,
    /// Number of random orthonormal starts added to the deterministic ones.
    pub random_starts: usize,
    pub seed: u64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self { max_evals: 5000, theta_max_evals: 2000, tol: 1e-8, random_starts: 1, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult<T: Real> {
    pub x: DVector<T>,
    pub f: T,
    pub evals: usize,
    pub converged: bool,
}

#[inline]
fn worse<T: Real>(a: T, b: T) -> bool {
    // NaN / inf sorts last.
    match (a.is_finite(), b.is_finite()) {
        (true, true) => a > b,
        (false, true) => true,
        _ => false,
    }
}

/// Nelder–Mead with restarts from the best vertex until a restart stops improving.
pub fn nelder_mead<T: Real, F>(mut f: F, x0: &DVector<T>, step: T, max_evals: usize, tol: T) -> OptimResult<T>
where
    F: FnMut(&DVector<T>) -> T,
{
    let mut evals = 0usize;
    let mut best_x = x0.clone();
    let mut best_f = f(x0);
    evals += 1;
    let mut converged = false;
    loop {
        let run = nelder_mead_once(&mut f, &best_x, step, max_evals.saturating_sub(evals), tol);
        evals += run.evals;
        let improved = worse(best_f, run.f) && (best_f - run.f).abs() > tol * (T::one() + run.f.abs());
        if worse(best_f, run.f) || !best_f.is_finite() {
            best_x = run.x;
            best_f = run.f;
        }
        if !run.converged {
            break;
        }
        if !improved {
            converged = true;
            break;
        }
    }
    OptimResult { x: best_x, f: best_f, evals, converged }
}

fn nelder_mead_once<T: Real, F>(f: &mut F, x0: &DVector<T>, step: T, budget: usize, tol: T) -> OptimResult<T>
where
    F: FnMut(&DVector<T>) -> T,
{
    let d = x0.len();
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let mut evals = 0usize;
    let mut simplex: Vec<(DVector<T>, T)> = Vec::with_capacity(d + 1);
    let mut eval = |x: &DVector<T>, evals: &mut usize| {
        *evals += 1;
        f(x)
    };
    simplex.push((x0.clone(), eval(x0, &mut evals)));
    for i in 0..d {
        let mut x = x0.clone();
        x[i] += step;
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }
    let sort = |s: &mut Vec<(DVector<T>, T)>| {
        s.sort_by(|a, b| {
            if worse(a.1, b.1) {
                std::cmp::Ordering::Greater
            } else if worse(b.1, a.1) {
                std::cmp::Ordering::Less
            } else {
                std::cmp::Ordering::Equal
            }
        })
    };
    loop {
        sort(&mut simplex);
        let fb = simplex[0].1;
        let fw = simplex[d].1;
        if fb.is_finite() && fw.is_finite() && (fw - fb).abs() <= tol * (T::one() + fb.abs()) {
            return OptimResult { x: simplex[0].0.clone(), f: fb, evals, converged: true };
        }
        if evals >= budget {
            return OptimResult { x: simplex[0].0.clone(), f: fb, evals, converged: false };
        }
        let mut centroid = DVector::zeros(d);
        for (x, _) in simplex.iter().take(d) {
            centroid += x;
        }
        centroid /= T::from_count(d);
        let worst = simplex[d].0.clone();
        let xr = &centroid + (&centroid - &worst);
        let fr = eval(&xr, &mut evals);
        if worse(simplex[0].1, fr) {
            let xe = &centroid + (&xr - &centroid) * two;
            let fe = eval(&xe, &mut evals);
            simplex[d] = if worse(fr, fe) { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if worse(simplex[d - 1].1, fr) {
            simplex[d] = (xr, fr);
            continue;
        }
        let (xc, fc) = if worse(simplex[d].1, fr) {
            let xc = &centroid + (&xr - &centroid) * half;
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = &centroid + (&worst - &centroid) * half;
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if worse(simplex[d].1.min(fr), fc) || (!fr.is_finite() && fc.is_finite()) {
            simplex[d] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let x = &x_best + (&v.0 - &x_best) * half;
            let fx = eval(&x, &mut evals);
            *v = (x, fx);
        }
    }
}

/// Central-difference gradient with per-coordinate step `h·(1 + |x_i|)`.
pub fn central_diff_gradient<T: Real, F>(f: &mut F, x: &DVector<T>, h: T) -> DVector<T>
where
    F: FnMut(&DVector<T>) -> T,
{
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let step = h * (T::one() + x[i].abs());
        xp[i] = x[i] + step;
        let fp = f(&xp);
        xp[i] = x[i] - step;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (step + step);
    }
    g
}

/// Why a quasi-Newton run stopped without converging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BfgsStop {
    Converged,
    LineSearchFailed,
    Budget,
}

#[derive(Debug, Clone)]
pub struct BfgsResult<T: Real> {
    pub x: DVector<T>,
    pub f: T,
    pub evals: usize,
    pub stop: BfgsStop,
}

/// BFGS with a backtracking Armijo line search.
///
/// `fg` returns the objective and its gradient. Converges when the relative
/// objective change of an accepted step falls below `tol` twice in a row, or
/// the gradient vanishes.
pub fn bfgs<T: Real, F>(mut fg: F, x0: &DVector<T>, max_evals: usize, tol: T) -> BfgsResult<T>
where
    F: FnMut(&DVector<T>) -> (T, DVector<T>),
{
    let d = x0.len();
    let mut x = x0.clone();
    let (mut fx, mut g) = fg(&x);
    let mut evals = 1usize;
    if d == 0 {
        return BfgsResult { x, f: fx, evals, stop: BfgsStop::Converged };
    }
    if !fx.is_finite() {
        return BfgsResult { x, f: fx, evals, stop: BfgsStop::LineSearchFailed };
    }
    let mut hinv = DMatrix::<T>::identity(d, d);
    let mut first = true;
    let mut small_steps = 0;
    let c1 = T::lit(1e-4);
    let gtol = T::tol_floor(1e-12, 10.0);
    loop {
        if g.amax() <= gtol * (T::one() + fx.abs()) {
            return BfgsResult { x, f: fx, evals, stop: BfgsStop::Converged };
        }
        if evals >= max_evals {
            return BfgsResult { x, f: fx, evals, stop: BfgsStop::Budget };
        }
        let mut dir = -(&hinv * &g);
        let mut slope = g.dot(&dir);
        if !(slope < T::zero()) {
            hinv = DMatrix::identity(d, d);
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        // First step is scaled so its length is at most one.
        let mut alpha = if first { T::one().min(T::one() / dir.norm()) } else { T::one() };
        let mut accepted = None;
        for _ in 0..50 {
            let xn = &x + &dir * alpha;
            let (fn_, gn) = fg(&xn);
            evals += 1;
            if fn_.is_finite() && fn_ <= fx + c1 * alpha * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            alpha *= T::lit(0.5);
            if evals >= max_evals {
                break;
            }
        }
        let Some((xn, fn_, gn)) = accepted else {
            let stop = if evals >= max_evals { BfgsStop::Budget } else { BfgsStop::LineSearchFailed };
            // A line search that cannot decrease at a near-stationary point is convergence.
            let stop = if stop == BfgsStop::LineSearchFailed
                && g.amax() <= T::tol_floor(1e-7, 1e4) * (T::one() + fx.abs())
            {
                BfgsStop::Converged
            } else {
                stop
            };
            return BfgsResult { x, f: fx, evals, stop };
        };
        let s = &xn - &x;
        let yv = &gn - &g;
        let sy = s.dot(&yv);
        let df = (fx - fn_).abs();
        x = xn;
        fx = fn_;
        g = gn;
        if sy > T::zero() {
            if first {
                hinv *= sy / yv.dot(&yv);
                first = false;
            }
            let rho = T::one() / sy;
            let hy = &hinv * &yv;
            let yhy = yv.dot(&hy);
            // H⁺ = H - ρ(s (Hy)ᵀ + Hy sᵀ) + (ρ² yᵀHy + ρ) s sᵀ
            hinv -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
        if df <= tol * (T::one() + fx.abs()) {
            small_steps += 1;
            if small_steps >= 2 {
                return BfgsResult { x, f: fx, evals, stop: BfgsStop::Converged };
            }
        } else {
            small_steps = 0;
        }
    }
}

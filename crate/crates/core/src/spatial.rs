//! Sites, the exponential-plus-nugget correlation kernel, correlation-matrix
//! factorization and separable Gaussian-process sampling.
//!
//! Distances are Euclidean on the raw planar coordinates. The nugget term of
//! the kernel attaches to an observation, not to a location: two distinct
//! observations taken at the same site have correlation `1 - tau`, which is
//! what keeps the correlation matrix nonsingular when sites repeat.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::SpatialDataset;
use crate::error::{Result, SpeError};
use crate::linalg::chol_log_det;
use crate::scalar::Real;

/// Random generator used throughout: ChaCha with 8 rounds, seeded from a `u64`
/// and split into independent streams per replicate / repetition.
pub type SpeRng = ChaCha8Rng;

/// Generator for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> SpeRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws a standard normal in the scalar type `T`.
pub fn standard_normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = rng.sample(StandardNormal);
    T::lit(z)
}

/// Planar sampling locations.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteSet<T: Real> {
    coords: Vec<[T; 2]>,
}

impl<T: Real> SiteSet<T> {
    pub fn new(coords: Vec<[T; 2]>) -> Result<Self> {
        if coords.is_empty() {
            return Err(SpeError::DimensionError("a site set needs at least one site".into()));
        }
        if coords.iter().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
            return Err(SpeError::InvalidParameter("site coordinates must be finite".into()));
        }
        Ok(Self { coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[T; 2]] {
        &self.coords
    }

    pub fn get(&self, i: usize) -> [T; 2] {
        self.coords[i]
    }

    /// True when two sites share exact coordinates.
    pub fn has_duplicates(&self) -> bool {
        let n = self.coords.len();
        (0..n).any(|i| (i + 1..n).any(|j| self.coords[i] == self.coords[j]))
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self { coords: idx.iter().map(|&i| self.coords[i]).collect() }
    }

    /// Pairwise Euclidean distance matrix.
    pub fn distances(&self) -> DMatrix<T> {
        let n = self.len();
        let mut d = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in (j + 1)..n {
                let v = distance(&self.coords[i], &self.coords[j]);
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
        d
    }

    /// Distances from each site in `other` (rows) to each site in `self` (columns).
    pub fn cross_distances(&self, other: &SiteSet<T>) -> DMatrix<T> {
        DMatrix::from_fn(other.len(), self.len(), |i, j| distance(&other.coords[i], &self.coords[j]))
    }

    /// Largest pairwise distance (zero for a single site).
    pub fn diameter(&self) -> T {
        self.distances().iter().fold(T::zero(), |a, &b| a.max(b))
    }
}

#[inline]
pub fn distance<T: Real>(s: &[T; 2], t: &[T; 2]) -> T {
    let dx = s[0] - t[0];
    let dy = s[1] - t[1];
    (dx * dx + dy * dy).sqrt()
}

/// Nugget proportion `tau ∈ [0, 1]` and range `lambda > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationParams<T> {
    pub tau: T,
    pub lambda: T,
}

impl<T: Real> CorrelationParams<T> {
    pub fn new(tau: T, lambda: T) -> Result<Self> {
        if !(tau >= T::zero() && tau <= T::one()) {
            return Err(SpeError::InvalidParameter(format!("tau = {tau} outside [0, 1]")));
        }
        if !(lambda > T::zero()) || !lambda.is_finite() {
            return Err(SpeError::InvalidParameter(format!("lambda = {lambda} must be positive")));
        }
        Ok(Self { tau, lambda })
    }

    /// `(logit tau, log lambda)`.
    pub fn to_unconstrained(&self) -> [T; 2] {
        let eps = T::lit(1e-12);
        let tau = self.tau.max(eps).min(T::one() - eps);
        [(tau / (T::one() - tau)).ln(), self.lambda.ln()]
    }

    /// Inverse of [`to_unconstrained`](Self::to_unconstrained).
    pub fn from_unconstrained(z: [T; 2]) -> Self {
        let tau = T::one() / (T::one() + (-z[0]).exp());
        Self { tau, lambda: z[1].exp() }
    }
}

/// `tau·1{s=t} + (1 - tau)·exp(-‖s - t‖ / lambda)`.
pub fn correlation<T: Real>(s: &[T; 2], t: &[T; 2], theta: &CorrelationParams<T>) -> T {
    if s == t {
        return T::one();
    }
    (T::one() - theta.tau) * (-distance(s, t) / theta.lambda).exp()
}

/// Correlation matrix among observations whose pairwise distances are `dist`.
/// The nugget sits on the diagonal only.
pub fn correlation_from_distances<T: Real>(dist: &DMatrix<T>, theta: &CorrelationParams<T>) -> DMatrix<T> {
    let n = dist.nrows();
    let scale = T::one() - theta.tau;
    let inv_range = T::one() / theta.lambda;
    let mut rho = DMatrix::zeros(n, n);
    for j in 0..n {
        rho[(j, j)] = T::one();
        for i in (j + 1)..n {
            let v = scale * (-dist[(i, j)] * inv_range).exp();
            rho[(i, j)] = v;
            rho[(j, i)] = v;
        }
    }
    rho
}

/// Cross-correlation between two disjoint sets of observations (no nugget term).
pub fn cross_correlation<T: Real>(cross_dist: &DMatrix<T>, theta: &CorrelationParams<T>) -> DMatrix<T> {
    let scale = T::one() - theta.tau;
    cross_dist.map(|d| scale * (-d / theta.lambda).exp())
}

/// A factorized correlation matrix `ρ(θ)`.
#[derive(Debug, Clone)]
pub struct CorrelationFactor<T: Real> {
    rho: DMatrix<T>,
    chol: Cholesky<T, Dyn>,
    log_det: T,
    jittered: bool,
}

impl<T: Real> CorrelationFactor<T> {
    /// Factorizes a correlation matrix, retrying once with `1e-10` on the diagonal.
    pub fn from_matrix(rho: DMatrix<T>) -> Result<Self> {
        let (chol, jittered) = match rho.clone().cholesky() {
            Some(c) => (c, false),
            None => {
                let mut bumped = rho.clone();
                let jitter = T::lit(1e-10);
                for i in 0..bumped.nrows() {
                    bumped[(i, i)] += jitter;
                }
                let c = bumped.cholesky().ok_or_else(|| {
                    SpeError::SingularCorrelation("Cholesky failed after diagonal jitter".into())
                })?;
                (c, true)
            }
        };
        let log_det = chol_log_det(chol.l_dirty());
        if !log_det.is_finite() {
            return Err(SpeError::SingularCorrelation("non-finite log-determinant".into()));
        }
        Ok(Self { rho, chol, log_det, jittered })
    }

    pub fn rho(&self) -> &DMatrix<T> {
        &self.rho
    }

    pub fn n(&self) -> usize {
        self.rho.nrows()
    }

    /// Natural log of `|ρ|`.
    pub fn log_det(&self) -> T {
        self.log_det
    }

    /// Whether the diagonal jitter retry was needed.
    pub fn jittered(&self) -> bool {
        self.jittered
    }

    /// Lower Cholesky factor `L` with `ρ = L Lᵀ`.
    pub fn lower(&self) -> DMatrix<T> {
        self.chol.l()
    }

    /// `ρ⁻¹ b`.
    pub fn solve(&self, b: &DMatrix<T>) -> DMatrix<T> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<T>) -> DVector<T> {
        self.chol.solve(b)
    }

    /// `L⁻¹ b`, the whitening transform.
    pub fn whiten(&self, b: &DMatrix<T>) -> DMatrix<T> {
        let mut out = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut out);
        out
    }
}

/// Builds and factorizes `ρ(θ)` over `sites`.
pub fn build_correlation<T: Real>(sites: &SiteSet<T>, theta: &CorrelationParams<T>) -> Result<CorrelationFactor<T>> {
    if theta.tau == T::zero() && sites.has_duplicates() {
        return Err(SpeError::DuplicateSites);
    }
    CorrelationFactor::from_matrix(correlation_from_distances(&sites.distances(), theta))
}

/// Mean vector and covariance of the joint process `Z = [Y X]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModelParams<T: Real> {
    pub mu_z: DVector<T>,
    pub sigma_z: DMatrix<T>,
    /// Number of response columns; the first `r` entries of `Z` are `Y`.
    pub r: usize,
}

impl<T: Real> JointModelParams<T> {
    pub fn new(mu_z: DVector<T>, sigma_z: DMatrix<T>, r: usize) -> Result<Self> {
        let k = mu_z.len();
        if sigma_z.nrows() != k || sigma_z.ncols() != k || r == 0 || r >= k {
            return Err(SpeError::DimensionError(format!(
                "joint model needs a {k}x{k} covariance and 1 <= r < {k}"
            )));
        }
        Ok(Self { mu_z, sigma_z, r })
    }

    /// Joint parameters implied by the envelope parameterization:
    /// `Σ_X = Γ₁Ω₁Γ₁ᵀ + Γ₀Ω₀Γ₀ᵀ`, `Σ_XY = Γ₁Ω₁η`, `Σ_Y = Σ_{Y|X} + ηᵀΩ₁η`.
    pub fn from_envelope(
        gamma1: &DMatrix<T>,
        gamma0: &DMatrix<T>,
        omega1: &DMatrix<T>,
        omega0: &DMatrix<T>,
        eta: &DMatrix<T>,
        sigma_ygx: &DMatrix<T>,
        mu_y: &DVector<T>,
        mu_x: &DVector<T>,
    ) -> Result<Self> {
        let p = gamma1.nrows();
        let r = sigma_ygx.nrows();
        let sigma_x = gamma1 * omega1 * gamma1.transpose() + gamma0 * omega0 * gamma0.transpose();
        let sigma_xy = if gamma1.ncols() == 0 { DMatrix::zeros(p, r) } else { gamma1 * omega1 * eta };
        let sigma_y = if gamma1.ncols() == 0 {
            sigma_ygx.clone()
        } else {
            sigma_ygx + eta.transpose() * omega1 * eta
        };
        let k = r + p;
        let mut sigma_z = DMatrix::zeros(k, k);
        sigma_z.view_mut((0, 0), (r, r)).copy_from(&sigma_y);
        sigma_z.view_mut((r, r), (p, p)).copy_from(&sigma_x);
        sigma_z.view_mut((r, 0), (p, r)).copy_from(&sigma_xy);
        sigma_z.view_mut((0, r), (r, p)).copy_from(&sigma_xy.transpose());
        let mut mu_z = DVector::zeros(k);
        mu_z.rows_mut(0, r).copy_from(mu_y);
        mu_z.rows_mut(r, p).copy_from(mu_x);
        Self::new(mu_z, sigma_z, r)
    }

    pub fn p(&self) -> usize {
        self.mu_z.len() - self.r
    }

    pub fn sigma_y(&self) -> DMatrix<T> {
        self.sigma_z.view((0, 0), (self.r, self.r)).into_owned()
    }

    pub fn sigma_x(&self) -> DMatrix<T> {
        let p = self.p();
        self.sigma_z.view((self.r, self.r), (p, p)).into_owned()
    }

    /// `Σ_XY`, `p × r`.
    pub fn sigma_xy(&self) -> DMatrix<T> {
        let p = self.p();
        self.sigma_z.view((self.r, 0), (p, self.r)).into_owned()
    }
}

/// Draws `Z = 1μ_Zᵀ + L_ρ E L_Σᵀ` using a generator seeded from `seed`.
pub fn sample_joint_gp<T: Real>(
    sites: &SiteSet<T>,
    theta: &CorrelationParams<T>,
    params: &JointModelParams<T>,
    seed: u64,
) -> Result<SpatialDataset<T>> {
    let factor = build_correlation(sites, theta)?;
    let mut rng = rng_for(seed, 0);
    sample_joint_gp_with(sites, &factor, params, &mut rng)
}

/// Sampling with a caller-supplied factor and generator (used by the harness).
pub fn sample_joint_gp_with<T: Real, R: Rng + ?Sized>(
    sites: &SiteSet<T>,
    factor: &CorrelationFactor<T>,
    params: &JointModelParams<T>,
    rng: &mut R,
) -> Result<SpatialDataset<T>> {
    let n = sites.len();
    let k = params.mu_z.len();
    if factor.n() != n {
        return Err(SpeError::DimensionError("correlation factor does not match sites".into()));
    }
    let l_sigma = params
        .sigma_z
        .clone()
        .cholesky()
        .ok_or_else(|| SpeError::SingularCovariance("Σ_Z is not positive definite".into()))?
        .l();
    // Row-major fill keeps the draw order independent of the storage layout.
    let mut e = DMatrix::<T>::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            e[(i, j)] = standard_normal(rng);
        }
    }
    let mut z = factor.lower() * e * l_sigma.transpose();
    for mut row in z.row_iter_mut() {
        row += params.mu_z.transpose();
    }
    let r = params.r;
    let y = z.columns(0, r).into_owned();
    let x = z.columns(r, k - r).into_owned();
    SpatialDataset::new(sites.clone(), y, x)
}

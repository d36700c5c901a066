#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use spe_core::simulation::random_orthobasis;
use spe_core::spatial::{sample_joint_gp, JointModelParams};
use spe_core::{Basis, Dataset, Sites, Theta};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn random_spd(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = normal_matrix(k, k, rng);
    &a * a.transpose() / k as f64 + DMatrix::identity(k, k) * 0.5
}

pub fn random_sites(n: usize, rng: &mut ChaCha8Rng) -> Sites {
    Sites::new((0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()).unwrap()
}

/// Unstructured data: iid normal Y, X at random sites.
pub fn random_dataset(n: usize, p: usize, r: usize, seed: u64) -> Dataset {
    let mut g = rng(seed);
    let sites = random_sites(n, &mut g);
    let x = normal_matrix(n, p, &mut g);
    let b = normal_matrix(p, r, &mut g);
    let y = &x * b + normal_matrix(n, r, &mut g);
    Dataset::new(sites, y, x).unwrap()
}

/// Random envelope parameters with well separated eigenvalues.
pub struct EnvelopeTruth {
    pub basis: Basis,
    pub eta: DMatrix<f64>,
    pub omega1: DMatrix<f64>,
    pub omega0: DMatrix<f64>,
    pub sigma_ygx: DMatrix<f64>,
}

impl EnvelopeTruth {
    pub fn random(p: usize, u: usize, r: usize, seed: u64) -> Self {
        let mut g = rng(seed);
        let full = random_orthobasis::<f64>(p, p, seed ^ 0x9e37).unwrap();
        let gamma1 = full.columns(0, u).into_owned();
        let gamma0 = full.columns(u, p - u).into_owned();
        Self {
            basis: Basis::new(gamma1, gamma0).unwrap(),
            eta: normal_matrix(u, r, &mut g),
            omega1: random_spd(u, &mut g) * 2.0,
            omega0: random_spd(p - u, &mut g) * 0.3,
            sigma_ygx: random_spd(r, &mut g) * 0.5,
        }
    }

    pub fn beta(&self) -> DMatrix<f64> {
        &self.basis.gamma1 * &self.eta
    }

    pub fn joint(&self) -> JointModelParams<f64> {
        let (p, r) = (self.basis.p(), self.sigma_ygx.nrows());
        JointModelParams::from_envelope(
            &self.basis.gamma1,
            &self.basis.gamma0,
            &self.omega1,
            &self.omega0,
            &self.eta,
            &self.sigma_ygx,
            &DVector::zeros(r),
            &DVector::zeros(p),
        )
        .unwrap()
    }

    pub fn sample(&self, n: usize, theta: Theta, seed: u64) -> Dataset {
        let sites = random_sites(n, &mut rng(seed ^ 0x51735));
        sample_joint_gp(&sites, &theta, &self.joint(), seed).unwrap()
    }
}

pub fn dense_rho(sites: &Sites, theta: &Theta) -> DMatrix<f64> {
    let n = sites.len();
    DMatrix::from_fn(n, n, |i, j| spe_core::spatial::correlation(&sites.get(i), &sites.get(j), theta))
}

pub fn inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().expect("invertible")
}

pub fn log_det(m: &DMatrix<f64>) -> f64 {
    m.clone().lu().determinant().ln()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

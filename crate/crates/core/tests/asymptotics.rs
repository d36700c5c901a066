mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use spe_core::asymptotics::{avar_all, avar_beta, duplication_matrix, elimination_matrix, fisher_full, z_scores, StructuralParams};
use spe_core::envelope::envelope_estimates;
use spe_core::gls::known_theta_variances;
use spe_core::simulation::random_orthobasis;
use spe_core::{fit_spe, Basis, OptimOptions, Theta};

fn params_from(t: &EnvelopeTruth) -> StructuralParams<f64> {
    StructuralParams::new(t.sigma_ygx.clone(), t.eta.clone(), t.basis.clone(), t.omega1.clone(), t.omega0.clone()).unwrap()
}

fn vech(m: &DMatrix<f64>) -> DVector<f64> {
    let p = m.nrows();
    DVector::from_iterator(p * (p + 1) / 2, (0..p).flat_map(|j| (j..p).map(move |i| (i, j))).map(|ij| m[ij]))
}

fn unvech(v: &[f64], p: usize) -> DMatrix<f64> {
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

/// Expected log-density of one `(Y, X)` pair at `h = [vech Σ_{Y|X}; vech Σ_X; vec β]`
/// when the data follow `h0` (zero means, independent observations).
fn expected_loglik(h: &[f64], h0: &[f64], p: usize, r: usize) -> f64 {
    let split = |h: &[f64]| {
        let a = r * (r + 1) / 2;
        let b = p * (p + 1) / 2;
        (unvech(&h[..a], r), unvech(&h[a..a + b], p), DMatrix::from_column_slice(p, r, &h[a + b..]))
    };
    let (s, sx, beta) = split(h);
    let (s0, sx0, beta0) = split(h0);
    let d = &beta - &beta0;
    let resid = &s0 + d.transpose() * &sx0 * &d;
    let lx = -0.5 * (log_det(&sx) + (inverse(&sx) * &sx0).trace());
    let ly = -0.5 * (log_det(&s) + (inverse(&s) * resid).trace());
    lx + ly
}

#[test]
fn fisher_matches_finite_difference_hessian() {
    for (p, r, seed) in [(2, 1, 1), (3, 2, 2), (2, 2, 3)] {
        let mut g = rng(seed);
        let sigma = random_spd(r, &mut g);
        let sx = random_spd(p, &mut g);
        let beta = normal_matrix(p, r, &mut g);
        let h0: Vec<f64> = vech(&sigma).iter().chain(vech(&sx).iter()).chain(beta.iter()).copied().collect();
        let m = h0.len();
        let step = 1e-4;
        let mut hess = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let f = |di: f64, dj: f64| {
                    let mut h = h0.clone();
                    h[i] += di;
                    h[j] += dj;
                    expected_loglik(&h, &h0, p, r)
                };
                hess[(i, j)] = -(f(step, step) - f(step, -step) - f(-step, step) + f(-step, -step)) / (4.0 * step * step);
            }
        }
        let jf = fisher_full(&sigma, &sx).unwrap();
        let err = max_abs_diff(&jf, &hess) / jf.amax();
        assert!(err < 1e-4, "p = {p}, r = {r}: relative error {err}");
    }
}

#[test]
fn scalar_fisher_information() {
    let (s2, v) = (0.7, 2.3);
    let jf = fisher_full(&DMatrix::from_element(1, 1, s2), &DMatrix::from_element(1, 1, v)).unwrap();
    let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 / (2.0 * s2 * s2), 1.0 / (2.0 * v * v), v / s2]));
    assert!(max_abs_diff(&jf, &expected) < 1e-14);
}

#[test]
fn doubling_sigma_quarters_its_block() {
    let mut g = rng(4);
    let s = random_spd(2, &mut g);
    let sx = random_spd(3, &mut g);
    let a = fisher_full(&s, &sx).unwrap();
    let b = fisher_full(&(&s * 2.0), &sx).unwrap();
    let blk = |m: &DMatrix<f64>| m.view((0, 0), (3, 3)).into_owned();
    assert!(max_abs_diff(&(blk(&a) / 4.0), &blk(&b)) < 1e-14 * blk(&a).amax());
}

#[test]
fn full_dimension_avar_is_full_model() {
    let t = EnvelopeTruth::random(3, 3, 2, 5);
    let params = params_from(&t);
    let av = avar_beta(&params).unwrap();
    let expected = t.sigma_ygx.kronecker(&inverse(&params.sigma_x()));
    assert!(max_abs_diff(&av, &expected) < 1e-10 * expected.amax());

    let all = avar_all(&params).unwrap();
    let jf_inv = inverse(&all.j_f);
    assert!(max_abs_diff(&all.j_spe_inv, &jf_inv) < 1e-8 * jf_inv.amax());
}

#[test]
fn scalar_avar_oracle() {
    let (eta, w1, w0, s2) = (1.3, 2.0, 0.5, 0.8);
    let basis = Basis::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
    let params = StructuralParams::new(
        DMatrix::from_element(1, 1, s2),
        DMatrix::from_element(1, 1, eta),
        basis,
        DMatrix::from_element(1, 1, w1),
        DMatrix::from_element(1, 1, w0),
    )
    .unwrap();
    let m = eta * eta * w0 / s2 + w1 / w0 + w0 / w1 - 2.0;
    let expected = DMatrix::from_row_slice(2, 2, &[s2 / w1, 0.0, 0.0, eta * eta / m]);
    let av = avar_beta(&params).unwrap();
    assert!(max_abs_diff(&av, &expected) < 1e-14);
}

#[test]
fn numeric_and_closed_form_agree() {
    for seed in 0..50u64 {
        let p = 2 + (seed % 4) as usize;
        let u = 1 + (seed as usize / 4) % (p - 1);
        let r = 1 + (seed % 2) as usize;
        let t = EnvelopeTruth::random(p, u, r, 900 + seed);
        let params = params_from(&t);
        let closed = avar_beta(&params).unwrap();
        let all = avar_all(&params).unwrap();
        let numeric = all.beta_block(p, r);
        let rel = max_abs_diff(&numeric, &closed) / closed.amax();
        assert!(rel <= 1e-6, "seed {seed} (p={p}, u={u}, r={r}): {rel}");
    }
}

#[test]
fn envelope_is_asymptotically_efficient() {
    for seed in 0..20u64 {
        let t = EnvelopeTruth::random(4, 1 + (seed % 3) as usize, 1 + (seed % 2) as usize, 950 + seed);
        let all = avar_all(&params_from(&t)).unwrap();
        let gap = inverse(&all.j_f) - &all.j_spe_inv;
        let gap = (&gap + gap.transpose()) / 2.0;
        let min = gap.symmetric_eigenvalues().min();
        assert!(min >= -1e-8 * all.j_spe_inv.amax().max(1.0), "seed {seed}: {min}");
    }
}

#[test]
fn fitted_models_are_efficient() {
    let th = Theta::new(0.1, 0.3).unwrap();
    for seed in 0..5u64 {
        let t = EnvelopeTruth::random(4, 2, 1, 970 + seed);
        let d = t.sample(60, th, seed);
        let fit = fit_spe(&d, 2, &OptimOptions::default()).unwrap();
        let all = avar_all(&StructuralParams::from_fit(&fit)).unwrap();
        let gap = inverse(&all.j_f) - &all.j_spe_inv;
        let gap = (&gap + gap.transpose()) / 2.0;
        assert!(gap.symmetric_eigenvalues().min() >= -1e-8 * all.j_spe_inv.amax().max(1.0));
    }
}

#[test]
fn known_theta_variance_identity_on_random_draws() {
    for seed in 0..30u64 {
        let t = EnvelopeTruth::random(5, 1 + (seed % 4) as usize, 1 + (seed % 3) as usize, 1100 + seed);
        let n = 30;
        let (spe, gls) = known_theta_variances(&t.basis, &t.omega1, &t.omega0, &t.sigma_ygx, n).unwrap();
        let (p, u) = (5.0, t.basis.u() as f64);
        let comp = t.sigma_ygx.kronecker(&(&t.basis.gamma0 * inverse(&t.omega0) * t.basis.gamma0.transpose()));
        let rhs = &gls * ((n as f64 - p - 2.0) / (n as f64 - u - 2.0)) - comp / (n as f64 - u - 2.0);
        assert!(max_abs_diff(&spe, &rhs) < 1e-10 * gls.amax().max(1.0));
    }
}

#[test]
fn avar_invariant_to_basis_representation() {
    for seed in 0..10u64 {
        let t = EnvelopeTruth::random(5, 3, 2, 1200 + seed);
        let o = random_orthobasis::<f64>(3, 3, seed).unwrap();
        let rotated = StructuralParams::new(
            t.sigma_ygx.clone(),
            o.transpose() * &t.eta,
            Basis::new(&t.basis.gamma1 * &o, t.basis.gamma0.clone()).unwrap(),
            o.transpose() * &t.omega1 * &o,
            t.omega0.clone(),
        )
        .unwrap();
        let a = avar_beta(&params_from(&t)).unwrap();
        let b = avar_beta(&rotated).unwrap();
        assert!(max_abs_diff(&a, &b) < 1e-8 * a.amax().max(1.0));
        assert!(a.clone().symmetric_eigenvalues().min() >= -1e-9);
    }
}

#[test]
fn zero_coefficients_have_zero_scores() {
    let t = EnvelopeTruth::random(3, 1, 1, 13);
    let d = t.sample(40, Theta::new(0.1, 0.3).unwrap(), 1);
    let fit = fit_spe(&d, 0, &OptimOptions::default()).unwrap();
    let table = z_scores(&fit, d.n()).unwrap();
    assert_eq!(table.z, DMatrix::zeros(3, 1));
    assert_eq!(table.beta, DMatrix::zeros(3, 1));
}

#[test]
fn scores_unchanged_by_response_scale() {
    let t = EnvelopeTruth::random(4, 2, 1, 14);
    let d = t.sample(60, Theta::new(0.1, 0.3).unwrap(), 2);
    let fit = fit_spe(&d, 2, &OptimOptions::default()).unwrap();
    let base = z_scores(&fit, d.n()).unwrap();
    let mut scaled = d.clone();
    scaled.y *= 3.5;
    // The objective shifts by a constant, so the maximizer is the same; refit at it.
    let refit = envelope_estimates(&scaled, &fit.basis, fit.theta).unwrap();
    let again = z_scores(&refit, d.n()).unwrap();
    assert!(max_abs_diff(&base.z, &again.z) < 1e-6 * base.z.amax().max(1.0));
    assert!(max_abs_diff(&(&base.se * 3.5), &again.se) < 1e-8 * again.se.amax());
    // A full refit lands on the same basis up to optimizer tolerance.
    let full = fit_spe(&scaled, 2, &OptimOptions::default()).unwrap();
    let z = z_scores(&full, d.n()).unwrap();
    assert!(max_abs_diff(&base.z, &z.z) < 1e-3 * base.z.amax());
    assert_eq!((base.se.nrows(), base.se.ncols()), (4, 1));
}

proptest! {
    #[test]
    fn duplication_and_elimination_identities(p in 1usize..6, seed in 0u64..10_000) {
        let a = normal_matrix(p, p, &mut rng(seed));
        let m = &a + a.transpose();
        let e = duplication_matrix::<f64>(p);
        let c = elimination_matrix::<f64>(p);
        let vec_m = DVector::from_column_slice(m.as_slice());
        prop_assert_eq!(&e * vech(&m), vec_m.clone());
        prop_assert_eq!(&c * &vec_m, vech(&m));
        prop_assert_eq!(&c * &e, DMatrix::identity(p * (p + 1) / 2, p * (p + 1) / 2));
        let sym = &e * &c;
        prop_assert!(max_abs_diff(&(&sym * &sym), &sym) == 0.0);
    }
}

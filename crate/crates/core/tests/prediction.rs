mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use spe_core::prediction::{cross_validate, fold_assignment, krige_predict, mspe, CvModel, PredictionRequest};
use spe_core::simulation::{decaying_eigenvalues, random_orthobasis};
use spe_core::{Basis, CorrelationKind, Criterion, Dataset, FullFit, OptimOptions, Sites, Theta};

fn theta(tau: f64, lambda: f64) -> Theta {
    Theta::new(tau, lambda).unwrap()
}

/// A hand-built regression surface; only the trend and correlation fields matter for prediction.
fn surface(mu: &[f64], beta: DMatrix<f64>, th: Theta) -> FullFit {
    let (p, r) = beta.shape();
    FullFit {
        mu_ygx: DVector::from_column_slice(mu),
        beta,
        sigma_ygx: DMatrix::identity(r, r),
        mu_x: DVector::zeros(p),
        mu_y: DVector::zeros(r),
        theta: th,
        kind: CorrelationKind::Spatial,
        n: 0,
        objective: 0.0,
        loglik: 0.0,
        param_count: 0,
        aic: 0.0,
        bic: 0.0,
    }
}

fn trend(fit: &FullFit, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut t = x * &fit.beta;
    for mut row in t.row_iter_mut() {
        row += fit.mu_ygx.transpose();
    }
    t
}

#[test]
fn mspe_examples() {
    let a = DMatrix::from_column_slice(3, 1, &[1.0f64, -2.0, 0.5]);
    assert_eq!(mspe(&a, &a).unwrap(), 0.0);
    assert!((mspe(&a.add_scalar(0.3), &a).unwrap() - 0.09).abs() < 1e-15);
    let b = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 2.0]);
    assert!((mspe(&a, &b).unwrap() - (1.0 + 4.0 + 2.25) / 3.0).abs() < 1e-15);
    assert!(mspe(&a, &DMatrix::zeros(2, 1)).is_err());
}

#[test]
fn matches_joint_normal_conditioning() {
    for seed in 0..5 {
        let mut g = rng(seed);
        let n = 5;
        let m = 2;
        let all_sites = random_sites(n + m, &mut g);
        let coords: Vec<[f64; 2]> = (0..n + m).map(|i| all_sites.get(i)).collect();
        let train_sites = Sites::new(coords[..n].to_vec()).unwrap();
        let test_sites = Sites::new(coords[n..].to_vec()).unwrap();
        let x = normal_matrix(n + m, 2, &mut g);
        let y = normal_matrix(n, 2, &mut g);
        let th = theta(0.15, 0.5);
        let fit = surface(&[0.4, -0.2], normal_matrix(2, 2, &mut g), th);
        let train = Dataset::new(train_sites, y.clone(), x.rows(0, n).into_owned()).unwrap();
        let req = PredictionRequest::new(train, test_sites, x.rows(n, m).into_owned()).unwrap();
        let got = krige_predict(&fit, &req).unwrap();

        let rho = dense_rho(&all_sites, &th);
        let mean = trend(&fit, &x);
        let r_nn = rho.view((0, 0), (n, n)).into_owned();
        let r_tn = rho.view((n, 0), (m, n)).into_owned();
        let oracle = mean.rows(n, m) + r_tn * inverse(&r_nn) * (&y - mean.rows(0, n));
        assert!(max_abs_diff(&got, &oracle) < 1e-8, "{got} vs {oracle}");
    }
}

#[test]
fn noiseless_process_interpolates() {
    let d = random_dataset(8, 2, 1, 3);
    let fit = surface(&[0.3], DMatrix::from_column_slice(2, 1, &[1.0, -0.5]), theta(0.0, 0.3));
    let req = PredictionRequest::new(d.clone(), d.sites.subset(&[2, 5]), d.x.select_rows(&[2, 5])).unwrap();
    let pred = krige_predict(&fit, &req).unwrap();
    assert!((pred[(0, 0)] - d.y[(2, 0)]).abs() < 1e-9);
    assert!((pred[(1, 0)] - d.y[(5, 0)]).abs() < 1e-9);
}

#[test]
fn distant_site_reverts_to_trend() {
    let d = random_dataset(8, 2, 1, 4);
    let fit = surface(&[0.3], DMatrix::from_column_slice(2, 1, &[1.0, -0.5]), theta(0.1, 0.3));
    let x_test = DMatrix::from_row_slice(1, 2, &[0.7, 1.1]);
    let req = PredictionRequest::new(d, Sites::new(vec![[1e4, 1e4]]).unwrap(), x_test.clone()).unwrap();
    let pred = krige_predict(&fit, &req).unwrap();
    assert_eq!(pred, trend(&fit, &x_test));
}

#[test]
fn zero_trend_is_simple_kriging() {
    let d = random_dataset(7, 2, 1, 5);
    let th = theta(0.2, 0.4);
    let fit = surface(&[0.0], DMatrix::zeros(2, 1), th);
    let test = random_sites(3, &mut rng(6));
    let req = PredictionRequest::new(d.clone(), test.clone(), DMatrix::from_element(3, 2, 9.0)).unwrap();
    let pred = krige_predict(&fit, &req).unwrap();
    let r_tn = DMatrix::from_fn(3, 7, |i, j| spe_core::spatial::correlation(&test.get(i), &d.sites.get(j), &th));
    let oracle = r_tn * inverse(&dense_rho(&d.sites, &th)) * &d.y;
    assert!(max_abs_diff(&pred, &oracle) < 1e-10);
}

#[test]
fn nugget_shrinks_toward_trend() {
    // At the training sites the smoother is I − τρ⁻¹, whose eigenvalues lie in [0, 1).
    let d = random_dataset(10, 2, 1, 7);
    let beta = DMatrix::from_column_slice(2, 1, &[0.5, 0.5]);
    let req = PredictionRequest::new(d.clone(), d.sites.clone(), d.x.clone()).unwrap();
    let exact = krige_predict(&surface(&[0.0], beta.clone(), theta(0.0, 0.3)), &req).unwrap();
    assert!(max_abs_diff(&exact, &d.y) < 1e-9);
    let mut last = (&d.y - trend(&surface(&[0.0], beta.clone(), theta(0.0, 0.3)), &d.x)).norm();
    for tau in [0.1, 0.3, 0.6] {
        let fit = surface(&[0.0], beta.clone(), theta(tau, 0.3));
        let smooth = krige_predict(&fit, &req).unwrap();
        let dev = (&smooth - trend(&fit, &d.x)).norm();
        assert!(dev < last, "τ = {tau}: {dev} vs {last}");
        assert!(max_abs_diff(&smooth, &d.y) > 1e-6);
        last = dev;
    }
}

#[test]
fn fold_sizes_balanced() {
    for (n, k) in [(53, 10), (20, 3), (7, 7)] {
        let folds = fold_assignment(n, k, 11, 0);
        let mut sizes = vec![0; k];
        for &f in &folds {
            sizes[f] += 1;
        }
        let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
        assert!(hi - lo <= 1, "{sizes:?}");
    }
    assert_ne!(fold_assignment(30, 5, 1, 0), fold_assignment(30, 5, 1, 1));
    assert_eq!(fold_assignment(30, 5, 1, 2), fold_assignment(30, 5, 1, 2));
}

#[test]
fn leave_one_out_runs() {
    let truth = EnvelopeTruth::random(2, 1, 1, 8);
    let d = truth.sample(12, theta(0.1, 0.3), 1);
    let report = cross_validate(&d, 12, 1, 3, &[CvModel::SpeFixed(1)], CorrelationKind::Spatial, &OptimOptions::default()).unwrap();
    assert_eq!(report.records.len(), 12);
    for f in 0..12 {
        assert_eq!(report.folds[0].iter().filter(|&&x| x == f).count(), 1);
    }
    assert!(report.records.iter().all(|r| r.mspe >= 0.0 && r.u == Some(1)));
}

#[test]
fn cross_validation_is_deterministic() {
    let truth = EnvelopeTruth::random(3, 1, 1, 9);
    let d = truth.sample(30, theta(0.1, 0.3), 2);
    let models = [CvModel::SpeSelect(Criterion::Bic), CvModel::Gls];
    let run = || cross_validate(&d, 5, 2, 17, &models, CorrelationKind::Spatial, &OptimOptions::default()).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.mean_mspe.iter().map(|m| m.0.as_str()).collect::<Vec<_>>(), ["spe_bic", "gls"]);
    let mean_y = d.y.mean();
    let var = d.y.iter().map(|v| (v - mean_y).powi(2)).sum::<f64>() / 30.0;
    assert!((a.response_variance - var).abs() < 1e-12);
}

#[test]
fn invalid_fold_counts_rejected() {
    let d = random_dataset(10, 2, 1, 10);
    let opts = OptimOptions::default();
    assert!(cross_validate(&d, 1, 1, 0, &[CvModel::Gls], CorrelationKind::Spatial, &opts).is_err());
    assert!(cross_validate(&d, 11, 1, 0, &[CvModel::Gls], CorrelationKind::Spatial, &opts).is_err());
    assert!(cross_validate(&d, 5, 0, 0, &[CvModel::Gls], CorrelationKind::Spatial, &opts).is_err());
}

#[test]
fn envelope_predicts_at_least_as_well_as_full_model() {
    // Ten predictors, three relevant directions, decaying eigenvalues.
    let (p, u) = (10, 3);
    let w = decaying_eigenvalues(1, p);
    let full = random_orthobasis::<f64>(p, p, 21).unwrap();
    let truth = EnvelopeTruth {
        basis: Basis::new(full.columns(0, u).into_owned(), full.columns(u, p - u).into_owned()).unwrap(),
        eta: DMatrix::from_element(u, 1, 1.0),
        omega1: DMatrix::from_diagonal(&DVector::from_column_slice(&w[..u])),
        omega0: DMatrix::from_diagonal(&DVector::from_column_slice(&w[u..])),
        sigma_ygx: DMatrix::from_element(1, 1, 0.05),
    };
    let d = truth.sample(100, theta(0.1, 0.3), 22);
    let models = [CvModel::SpeSelect(Criterion::Bic), CvModel::Gls];
    let report = cross_validate(&d, 5, 20, 23, &models, CorrelationKind::Spatial, &OptimOptions::default()).unwrap();
    let (spe, gls) = (report.mean_mspe[0].1, report.mean_mspe[1].1);
    assert!(spe <= gls, "SPE {spe} vs GLS {gls}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn invariant_to_training_order(seed in 0u64..10_000) {
        let d = random_dataset(9, 2, 2, seed);
        let fit = surface(&[0.1, 0.2], normal_matrix(2, 2, &mut rng(seed + 1)), theta(0.2, 0.3));
        let test = random_sites(2, &mut rng(seed + 2));
        let x = normal_matrix(2, 2, &mut rng(seed + 3));
        let perm = [3, 1, 8, 0, 2, 7, 5, 6, 4];
        let a = krige_predict(&fit, &PredictionRequest::new(d.clone(), test.clone(), x.clone()).unwrap()).unwrap();
        let b = krige_predict(&fit, &PredictionRequest::new(d.subset(&perm), test, x).unwrap()).unwrap();
        prop_assert!(max_abs_diff(&a, &b) < 1e-10);
    }
}

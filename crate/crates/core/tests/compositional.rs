mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use spe_core::compositional::{
    log_ratio_transform, replace_below_threshold, response_transform, subcomposition_normalize, synthetic_geochem, CompositionTable,
    MAJOR_ELEMENTS, TIO2_THRESHOLD,
};
use spe_core::envelope::gls_fit_at_theta;
use spe_core::{fit_full_model, Dataset, OptimOptions, Sites, SpeError, Theta};

fn names(k: usize) -> Vec<String> {
    (0..k).map(|j| format!("c{j}")).collect()
}

fn table(values: DMatrix<f64>, thresholds: Vec<Option<f64>>) -> CompositionTable<f64> {
    CompositionTable::new(names(values.ncols()), values, thresholds).unwrap()
}

fn positive_table(n: usize, k: usize, seed: u64) -> CompositionTable<f64> {
    let v = normal_matrix(n, k, &mut rng(seed)).map(f64::exp);
    table(v, vec![None; k])
}

#[test]
fn replacement_examples() {
    let t = table(DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 0.05, 2.0, 0.019, 3.0]), vec![Some(0.02), Some(0.5)]);
    let (out, count) = replace_below_threshold(&t).unwrap();
    assert_eq!(out.values.column(0).as_slice(), &[0.01, 0.05, 0.01]);
    assert_eq!(out.values.column(1).as_slice(), &[1.0, 2.0, 3.0]);
    assert_eq!(count, 2);

    let clean = positive_table(5, 3, 1);
    let with_thr = CompositionTable { thresholds: vec![Some(1e-9); 3], ..clean.clone() };
    let (same, zero) = replace_below_threshold(&with_thr).unwrap();
    assert_eq!((same.values, zero), (clean.values, 0));
}

#[test]
fn zeros_without_threshold_rejected() {
    let t = table(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 1.0]), vec![None, None]);
    assert_eq!(replace_below_threshold(&t).unwrap_err(), SpeError::MissingThreshold { column: "c1".into() });
    assert!(CompositionTable::new(names(1), DMatrix::from_element(1, 1, -1.0), vec![None]).is_err());
}

#[test]
fn closure_examples() {
    let t = table(DMatrix::from_row_slice(1, 4, &[2.0, 3.0, 5.0, 7.0]), vec![None; 4]);
    let c = subcomposition_normalize(&t, &["c0", "c1", "c2"]).unwrap();
    let v = c.values.row(0);
    assert!((v[0] - 0.2).abs() < 1e-15 && (v[1] - 0.3).abs() < 1e-15 && (v[2] - 0.5).abs() < 1e-15);
    assert_eq!(v[3], 7.0);
    let single = subcomposition_normalize(&t, &["c3"]).unwrap();
    assert_eq!(single.values[(0, 3)], 1.0);
    assert!(subcomposition_normalize(&t, &[]).is_err());
    let zero = table(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), vec![None; 2]);
    assert!(matches!(subcomposition_normalize(&zero, &["c0", "c1"]), Err(SpeError::NonpositiveComponent { .. })));
}

#[test]
fn closed_rows_sum_to_one() {
    let t = positive_table(40, 6, 2);
    let cols = ["c0", "c2", "c3", "c5"];
    let c = subcomposition_normalize(&t, &cols).unwrap();
    for i in 0..40 {
        let s: f64 = [0, 2, 3, 5].iter().map(|&j| c.values[(i, j)]).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn log_ratio_examples() {
    let t = table(DMatrix::from_row_slice(2, 3, &[0.2, 0.3, 0.5, 0.4, 0.4, 0.4]), vec![None; 3]);
    let (x, n) = log_ratio_transform(&t, "c2").unwrap();
    assert!((x[(0, 0)] - 0.4f64.ln()).abs() < 1e-15 && (x[(0, 1)] - 0.6f64.ln()).abs() < 1e-15);
    assert_eq!(x.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
    assert_eq!(n, ["log(c0/c2)", "log(c1/c2)"]);
    let (_, n) = log_ratio_transform(&t, "c0").unwrap();
    assert_eq!(n, ["log(c1/c0)", "log(c2/c0)"]);
    assert!(log_ratio_transform(&t, "nope").is_err());
}

#[test]
fn denominator_change_is_affine() {
    // With denominator a, the coordinates relative to b are X_j − X_b (j ≠ b) and −X_b for a.
    let t = positive_table(25, 5, 3);
    let (xa, _) = log_ratio_transform(&t, "c0").unwrap();
    let (xb, _) = log_ratio_transform(&t, "c3").unwrap();
    // Columns of xa: c1, c2, c3, c4. Columns of xb: c0, c1, c2, c4.
    let mut l = DMatrix::zeros(4, 4);
    l[(2, 0)] = -1.0;
    for (row, col) in [(0, 1), (1, 2), (3, 3)] {
        l[(row, col)] = 1.0;
        l[(2, col)] = -1.0;
    }
    let mapped = &xa * &l;
    assert!(max_abs_diff(&mapped, &xb) < 1e-12);
    assert!(l.determinant().abs() > 0.5);
}

#[test]
fn response_examples() {
    let y = response_transform(&[5e5, 1e6 / (1.0 + std::f64::consts::E), 1.0]).unwrap();
    assert_eq!(y[0], 0.0);
    assert!((y[1] + 1.0).abs() < 1e-12);
    assert!((y[2] - (1.0f64 / 999_999.0).ln()).abs() < 1e-15);
    for bad in [0.0, -3.0, 1e6, 2e6, f64::NAN] {
        assert!(response_transform(&[bad]).is_err());
    }
}

/// Fits the full model on the same data with two log-ratio denominators.
fn denominator_pair() -> (Dataset, Dataset) {
    let samples = synthetic_geochem(53, 14, 4);
    let k = MAJOR_ELEMENTS.len();
    let values = DMatrix::from_fn(53, k, |i, j| samples[i].majors[j]);
    let mut thr = vec![None; k];
    thr[1] = Some(TIO2_THRESHOLD);
    let t = CompositionTable::new(MAJOR_ELEMENTS.iter().map(|s| s.to_string()).collect(), values, thr).unwrap();
    let (t, _) = replace_below_threshold(&t).unwrap();
    let sub = ["SiO2", "Al2O3", "MgO", "K2O", "P2O5"];
    let t = subcomposition_normalize(&t, &sub).unwrap().select(&sub).unwrap();
    let y = response_transform(&samples.iter().map(|s| s.ree_ppm).collect::<Vec<_>>()).unwrap();
    let y = DMatrix::from_column_slice(53, 1, &y);
    let sites = Sites::new(samples.iter().map(|s| [s.sx, s.sy]).collect()).unwrap();
    let (xa, _) = log_ratio_transform(&t, "Al2O3").unwrap();
    let (xb, _) = log_ratio_transform(&t, "SiO2").unwrap();
    let da = Dataset::new(sites.clone(), y.clone(), xa).unwrap();
    let db = Dataset::new(sites, y, xb).unwrap();
    (da, db)
}

fn fitted(d: &Dataset, th: Theta) -> DMatrix<f64> {
    let fit = gls_fit_at_theta(d, th).unwrap();
    let mut f = &d.x * &fit.beta;
    f.add_scalar_mut(fit.mu_ygx[0]);
    f
}

#[test]
fn gls_fitted_values_ignore_denominator() {
    let opts = OptimOptions::default();
    let (da, db) = denominator_pair();
    // Same correlation parameters: the two designs span the same affine space.
    let th = Theta::new(0.3, 0.2).unwrap();
    assert!(max_abs_diff(&fitted(&da, th), &fitted(&db, th)) < 1e-8);
    // The profile likelihoods differ by a constant, so the separately estimated
    // parameters agree up to optimizer tolerance.
    let fa = fit_full_model(&da, &opts).unwrap();
    let fb = fit_full_model(&db, &opts).unwrap();
    assert!((fa.theta.tau - fb.theta.tau).abs() < 1e-4 && (fa.theta.lambda - fb.theta.lambda).abs() < 1e-4 * fa.theta.lambda.max(1.0));
    assert!(max_abs_diff(&fitted(&da, fa.theta), &fitted(&db, fb.theta)) < 1e-4);
}

#[test]
fn synthetic_fixture_shape() {
    let s = synthetic_geochem(53, 14, 1);
    assert_eq!(s.len(), 53);
    let mut sites: Vec<(u64, u64)> = s.iter().map(|x| (x.sx.to_bits(), x.sy.to_bits())).collect();
    sites.sort();
    sites.dedup();
    assert_eq!(sites.len(), 14);
    assert!(s.iter().all(|x| x.majors.len() == 11 && x.ree_ppm > 0.0 && x.ree_ppm < 1e6));
    let zeros = s.iter().filter(|x| x.majors[1] == 0.0).count();
    assert!((1..=5).contains(&zeros), "{zeros} TiO2 values below detection");
    assert_eq!(synthetic_geochem(53, 14, 1), s);
}

proptest! {
    #[test]
    fn response_strictly_increasing(a in 1e-3f64..999_999.0, b in 1e-3f64..999_999.0) {
        prop_assume!(a != b);
        let y = response_transform(&[a, b]).unwrap();
        prop_assert_eq!(a < b, y[0] < y[1]);
    }

    #[test]
    fn closure_is_scale_invariant(seed in 0u64..10_000, c in 0.01f64..100.0) {
        let t = positive_table(6, 4, seed);
        let scaled = CompositionTable { values: &t.values * c, ..t.clone() };
        let cols = ["c0", "c1", "c2", "c3"];
        let a = subcomposition_normalize(&t, &cols).unwrap();
        let b = subcomposition_normalize(&scaled, &cols).unwrap();
        prop_assert!(max_abs_diff(&a.values, &b.values) < 1e-12);
        let (la, _) = log_ratio_transform(&t, "c1").unwrap();
        let (lb, _) = log_ratio_transform(&a, "c1").unwrap();
        prop_assert!(max_abs_diff(&la, &lb) < 1e-12);
    }
}

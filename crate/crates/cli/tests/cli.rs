mod common;

use common::*;
use tempfile::tempdir;

#[test]
fn missing_input_is_a_usage_error() {
    let dir = tempdir().unwrap();
    let out = spe(&["fit", "--data", path_str(&dir.path().join("nope.csv")), "--response", "y", "--u", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let rec = error_record(&out);
    assert_eq!(rec["error"], "UsageError");
    assert!(rec["message"].as_str().unwrap().contains("does not exist"));
}

#[test]
fn missing_flag_is_a_usage_error() {
    let out = spe(&["fit", "--data", "x.csv", "--response", "y"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"], "UsageError");
    assert_eq!(spe(&["frobnicate"]).status.code(), Some(2));
    assert!(spe(&["--help"]).status.success());
}

#[test]
fn bad_thread_count_rejected() {
    let out = std::process::Command::new(BIN).args(["fixture"]).env("SPE_THREADS", "many").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(error_record(&out)["message"].as_str().unwrap().contains("SPE_THREADS"));
}

#[test]
fn transform_rejects_bad_inputs() {
    let dir = tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    std::fs::write(&raw, "sx,sy,A,B,C,R\n0,0,1,2,3,10\n1,0,2,2,3,1000000\n").unwrap();
    let base = ["transform", "--data", path_str(&raw), "--response", "R"];
    let run = |extra: &[&str]| spe(&[&base[..], extra].concat());

    // A response of 10⁶ ppm has no finite logit.
    let out = run(&["--denominator", "C"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["error"], "OutOfRange");

    assert_eq!(run(&["--denominator", "Z"]).status.code(), Some(2));
    assert_eq!(run(&["--denominator", "A", "--subcomposition", "B,C"]).status.code(), Some(2));
    assert_eq!(run(&["--denominator", "A", "--threshold", "B"]).status.code(), Some(2));
    assert_eq!(run(&["--denominator", "A", "--threshold", "Q=1"]).status.code(), Some(2));
}

#[test]
fn transform_output_layout() {
    let dir = tempdir().unwrap();
    let data = prepared_data(dir.path());
    let (header, rows) = read_csv(&data);
    assert_eq!(header.len(), 13);
    assert_eq!(&header[..4], ["sx", "sy", "REE", "log(SiO2/Al2O3)"]);
    assert!(!header.iter().any(|h| h.contains("(Al2O3/")));
    assert_eq!(rows.len(), 53);
    assert!(rows.iter().flatten().all(|v| v.parse::<f64>().unwrap().is_finite()));
    let report = read_json(&dir.path().join("transform.json"));
    assert_eq!(report["rows"], 53);
    assert_eq!(report["denominator"], "Al2O3");
    assert_eq!(report["predictors"].as_array().unwrap().len(), 10);
    assert!(report["replacements"].as_u64().unwrap() >= 1);
}

#[test]
fn fit_select_predict_pipeline() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    let data = prepared_data(d);
    let common = ["--data", path_str(&data), "--response", "REE"];
    let with = |cmd: &str, extra: &[&str]| -> Vec<String> {
        [&[cmd][..], &common[..], extra].concat().into_iter().map(String::from).collect()
    };
    let run = |args: Vec<String>| spe(&args.iter().map(String::as_str).collect::<Vec<_>>());

    let out = run(with("fit", &["--u", "11"]));
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"], "UsageError");

    // u = 0: every coefficient is exactly zero, written to standard output.
    let out = run(with("fit", &["--u", "0"]));
    assert!(out.status.success());
    let mut r = csv::Reader::from_reader(out.stdout.as_slice());
    assert_eq!(r.headers().unwrap(), vec!["predictor", "response", "estimate", "se", "z"]);
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|row| row[2].parse::<f64>().unwrap() == 0.0));

    let sel = d.join("sel.csv");
    spe_ok(&with("select", &["--out", path_str(&sel)]).iter().map(String::as_str).collect::<Vec<_>>());
    let (header, rows) = read_csv(&sel);
    assert_eq!(header[0], "u");
    assert_eq!(rows.len(), 11);
    assert_eq!(rows.iter().filter(|r| r[8] == "1").count(), 1);
    let u_hat = rows.iter().find(|r| r[8] == "1").unwrap()[0].clone();

    let fit_json = d.join("fit.json");
    let coef = d.join("coef.csv");
    let args = with("fit", &["--u", &u_hat, "--out-json", path_str(&fit_json), "--out-coef", path_str(&coef)]);
    spe_ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let artifact = read_json(&fit_json);
    assert_eq!(artifact["fit"]["u"].as_u64().unwrap().to_string(), u_hat);
    assert_eq!(artifact["config"]["command"], "fit");
    assert_eq!(artifact["coefficients"].as_array().unwrap().len(), 10);
    assert_eq!(read_csv(&coef).1.len(), 10);

    // Predict at the training sites from a file without the response column.
    let (h, rows) = read_csv(&data);
    let test = d.join("test.csv");
    let mut w = csv::Writer::from_path(&test).unwrap();
    let keep = |v: &[String]| -> Vec<String> { v.iter().enumerate().filter(|(j, _)| *j != 2).map(|(_, s)| s.clone()).collect() };
    w.write_record(keep(&h)).unwrap();
    for row in rows.iter().take(5) {
        w.write_record(keep(row)).unwrap();
    }
    w.flush().unwrap();
    let pred = d.join("pred.csv");
    spe_ok(&["predict", "--data", path_str(&data), "--fit", path_str(&fit_json), "--test", path_str(&test), "--out", path_str(&pred)]);
    let (ph, prow) = read_csv(&pred);
    assert_eq!(ph, ["row", "sx", "sy", "response", "prediction"]);
    assert_eq!(prow.len(), 5);
    assert!(prow.iter().all(|r| r[4].parse::<f64>().unwrap().is_finite()));
}

#[test]
fn simulate_reruns_are_byte_identical() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    for dir in [&a, &b] {
        spe_ok(&["simulate", "--scenario", "1", "--n", "100", "--reps", "100", "--seed", "7", "--out-dir", path_str(dir.path())]);
    }
    for file in ["summary.csv", "replicates.csv", "histogram.csv", "overlay.csv", "result.json"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(file)).unwrap(), "{file} differs");
    }
    let (header, rows) = read_csv(&a.path().join("summary.csv"));
    assert_eq!(header, ["method", "metric", "mean", "se", "count"]);
    assert!(rows.iter().any(|r| r[0] == "SPE" && r[1] == "angle"));
    assert_eq!(read_csv(&a.path().join("replicates.csv")).1.len(), 100);
}

#[test]
fn simulate_rejects_unknown_scenario() {
    let dir = tempdir().unwrap();
    let out = spe(&["simulate", "--scenario", "9", "--n", "100", "--out-dir", path_str(dir.path())]);
    assert_ne!(out.status.code(), Some(0));
    assert!(error_record(&out)["message"].is_string());
}

/// One draw from the selected-dimension simulation design: p = 10, u = 3.
fn write_selection_data(path: &std::path::Path, seed: u64) {
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use spe_core::simulation::{decaying_eigenvalues, random_orthobasis};
    use spe_core::spatial::{sample_joint_gp, JointModelParams};
    use spe_core::{Sites, Theta};

    let (n, p, u) = (200, 10, 3);
    let full = random_orthobasis::<f64>(p, p, seed).unwrap();
    let w = decaying_eigenvalues(1, p);
    let joint = JointModelParams::from_envelope(
        &full.columns(0, u).into_owned(),
        &full.columns(u, p - u).into_owned(),
        &DMatrix::from_diagonal(&DVector::from_column_slice(&w[..u])),
        &DMatrix::from_diagonal(&DVector::from_column_slice(&w[u..])),
        &DMatrix::from_element(u, 1, 1.0),
        &DMatrix::from_element(1, 1, 0.05),
        &DVector::zeros(1),
        &DVector::zeros(p),
    )
    .unwrap();
    let mut g = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let sites = Sites::new((0..n).map(|_| [g.random::<f64>(), g.random::<f64>()]).collect()).unwrap();
    let d = sample_joint_gp(&sites, &Theta::new(0.1, 0.3).unwrap(), &joint, seed).unwrap();

    let mut w = csv::Writer::from_path(path).unwrap();
    let mut header = vec!["sx".to_string(), "sy".into(), "y".into()];
    header.extend((1..=p).map(|j| format!("x{j}")));
    w.write_record(&header).unwrap();
    for i in 0..n {
        let s = d.sites.get(i);
        let mut row = vec![format!("{:.16e}", s[0]), format!("{:.16e}", s[1]), format!("{:.16e}", d.y[(i, 0)])];
        row.extend((0..p).map(|j| format!("{:.16e}", d.x[(i, j)])));
        w.write_record(&row).unwrap();
    }
    w.flush().unwrap();
}

#[test]
fn select_recovers_simulated_dimension() {
    let dir = tempdir().unwrap();
    let mut picks = Vec::new();
    for seed in 0..5 {
        let data = dir.path().join(format!("sim{seed}.csv"));
        let out = dir.path().join(format!("sel{seed}.csv"));
        write_selection_data(&data, 100 + seed);
        spe_ok(&["select", "--data", path_str(&data), "--response", "y", "--out", path_str(&out)]);
        let (_, rows) = read_csv(&out);
        let bic = |r: &Vec<String>| r[3].parse::<f64>().unwrap_or(f64::INFINITY);
        let argmin = rows.iter().min_by(|a, b| bic(a).total_cmp(&bic(b))).unwrap();
        assert_eq!(argmin[8], "1", "selected row is not the BIC minimum");
        picks.push(argmin[0].parse::<usize>().unwrap());
    }
    assert!(picks.iter().filter(|&&u| u == 3).count() >= 3, "selected {picks:?}");
}

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_spe");

pub fn spe(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("SPE_THREADS").output().expect("failed to launch spe")
}

/// Runs `spe` and panics with its stderr unless it succeeds.
pub fn spe_ok(args: &[&str]) -> Output {
    let out = spe(args);
    assert!(out.status.success(), "spe {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// The last stderr line parsed as the JSON error record.
pub fn error_record(out: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().last().expect("empty stderr");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {line}"))
}

pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_owned).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(str::to_owned).collect()).collect();
    (header, rows)
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// Writes the synthetic survey and its model-ready transform into `dir`.
pub fn prepared_data(dir: &Path) -> PathBuf {
    let raw = dir.join("raw.csv");
    let data = dir.join("data.csv");
    spe_ok(&["fixture", "--out", path_str(&raw)]);
    spe_ok(&[
        "transform",
        "--data",
        path_str(&raw),
        "--response",
        "REE",
        "--threshold",
        "TiO2=0.02",
        "--denominator",
        "Al2O3",
        "--out",
        path_str(&data),
        "--report",
        path_str(&dir.join("transform.json")),
    ]);
    data
}

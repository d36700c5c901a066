use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use spe_core::{Dataset, Sites};

use crate::error::{usage, CliError, CliResult};

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

/// A CSV file held as strings, with a header row.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read(path: &Path) -> CliResult<Self> {
        if !path.exists() {
            return Err(usage(format!("input file {} does not exist", path.display())));
        }
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            rows.push(rec?.iter().map(str::to_owned).collect());
        }
        if rows.is_empty() {
            return Err(usage(format!("{} has no data rows", path.display())));
        }
        Ok(Self { headers, rows })
    }

    pub fn index(&self, name: &str) -> CliResult<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| usage(format!("no column named {name:?}; available: {}", self.headers.join(","))))
    }

    pub fn numeric(&self, name: &str) -> CliResult<Vec<f64>> {
        let j = self.index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row[j].parse::<f64>().map_err(|_| usage(format!("row {}, column {name}: {:?} is not a number", i + 1, row[j])))
            })
            .collect()
    }

    pub fn matrix(&self, names: &[String]) -> CliResult<DMatrix<f64>> {
        let cols = names.iter().map(|n| self.numeric(n)).collect::<CliResult<Vec<_>>>()?;
        Ok(DMatrix::from_fn(self.rows.len(), names.len(), |i, j| cols[j][i]))
    }

    pub fn sites(&self, coords: &[String; 2]) -> CliResult<Sites> {
        let sx = self.numeric(&coords[0])?;
        let sy = self.numeric(&coords[1])?;
        Ok(Sites::new(sx.into_iter().zip(sy).map(|(a, b)| [a, b]).collect())?)
    }
}

/// Column roles of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roles {
    pub coords: [String; 2],
    pub response: Vec<String>,
    pub predictors: Vec<String>,
}

/// Splits `a,b,c` into names, rejecting empties.
pub fn name_list(s: &str) -> CliResult<Vec<String>> {
    let names: Vec<String> = s.split(',').map(|n| n.trim().to_owned()).collect();
    if names.iter().any(String::is_empty) {
        return Err(usage(format!("empty column name in {s:?}")));
    }
    Ok(names)
}

pub fn coord_pair(s: &str) -> CliResult<[String; 2]> {
    match name_list(s)?.as_slice() {
        [a, b] => Ok([a.clone(), b.clone()]),
        _ => Err(usage(format!("--coords needs exactly two names, got {s:?}"))),
    }
}

/// Resolves roles against the header. Predictors default to every column that
/// is neither a coordinate nor a response.
pub fn resolve_roles(table: &RawTable, coords: &str, response: &str, predictors: Option<&str>) -> CliResult<Roles> {
    let coords = coord_pair(coords)?;
    let response = name_list(response)?;
    let predictors = match predictors {
        Some(p) => name_list(p)?,
        None => table.headers.iter().filter(|h| !coords.contains(h) && !response.contains(h)).cloned().collect(),
    };
    let mut all: Vec<&String> = coords.iter().chain(&response).chain(&predictors).collect();
    for name in &all {
        table.index(name)?;
    }
    let total = all.len();
    all.sort();
    all.dedup();
    if all.len() != total {
        return Err(usage("coordinate, response and predictor columns must be disjoint"));
    }
    if predictors.is_empty() {
        return Err(usage("no predictor columns"));
    }
    Ok(Roles { coords, response, predictors })
}

pub fn load_dataset(table: &RawTable, roles: &Roles) -> CliResult<Dataset> {
    let sites = table.sites(&roles.coords)?;
    let y = table.matrix(&roles.response)?;
    let x = table.matrix(&roles.predictors)?;
    Ok(Dataset::new(sites, y, x)?)
}

fn open_out(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.display().to_string(), source })?;
            }
            let f = File::create(p).map_err(|source| CliError::Io { path: p.display().to_string(), source })?;
            Box::new(BufWriter::new(f))
        }
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

/// Writes a CSV with a fixed header; `None` means standard output.
pub fn write_csv(path: Option<&Path>, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(open_out(path)?);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|source| CliError::Io { path: display(path), source })?;
    Ok(())
}

pub fn write_json<S: Serialize>(path: Option<&Path>, value: &S) -> CliResult<()> {
    let mut out = open_out(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).and_then(|_| out.flush()).map_err(|source| CliError::Io { path: display(path), source })?;
    Ok(())
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> CliResult<D> {
    let f = File::open(path).map_err(|_| usage(format!("cannot open {}", path.display())))?;
    Ok(serde_json::from_reader(io::BufReader::new(f))?)
}

fn display(path: Option<&Path>) -> String {
    path.map(|p| p.display().to_string()).unwrap_or_else(|| "<stdout>".into())
}

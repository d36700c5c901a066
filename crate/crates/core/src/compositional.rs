//! Compositional-data preparation: detection-threshold replacement,
//! subcomposition closure, additive log-ratios and the response transform.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpeError};
use crate::scalar::Real;
use crate::spatial::{rng_for, standard_normal};

/// `n` rows of `k` nonnegative component concentrations with optional
/// per-column detection thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionTable<T: Real> {
    pub columns: Vec<String>,
    pub values: DMatrix<T>,
    pub thresholds: Vec<Option<T>>,
}

impl<T: Real> CompositionTable<T> {
    pub fn new(columns: Vec<String>, values: DMatrix<T>, thresholds: Vec<Option<T>>) -> Result<Self> {
        if columns.len() != values.ncols() || thresholds.len() != values.ncols() {
            return Err(SpeError::DimensionError(format!(
                "{} names and {} thresholds for {} columns",
                columns.len(),
                thresholds.len(),
                values.ncols()
            )));
        }
        for (j, name) in columns.iter().enumerate() {
            if let Some(i) = values.column(j).iter().position(|v| !v.is_finite() || *v < T::zero()) {
                return Err(SpeError::NonpositiveComponent { row: i, column: name.clone() });
            }
            if let Some(t) = thresholds[j] {
                if !(t > T::zero()) {
                    return Err(SpeError::InvalidParameter(format!("threshold for {name} must be positive")));
                }
            }
        }
        Ok(Self { columns, values, thresholds })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| SpeError::InvalidParameter(format!("no column named {name}")))
    }

    /// The named columns, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let idx = names.iter().map(|n| self.column_index(n)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            columns: idx.iter().map(|&j| self.columns[j].clone()).collect(),
            values: self.values.select_columns(idx.iter()),
            thresholds: idx.iter().map(|&j| self.thresholds[j]).collect(),
        })
    }
}

/// Replaces every value strictly below its column's detection threshold by
/// half the threshold. Returns the new table and the number of replacements.
///
/// A column without a threshold that holds a zero cannot be repaired and is
/// reported as [`SpeError::MissingThreshold`].
pub fn replace_below_threshold<T: Real>(table: &CompositionTable<T>) -> Result<(CompositionTable<T>, usize)> {
    let mut out = table.clone();
    let mut count = 0;
    let half = T::lit(0.5);
    for j in 0..table.ncols() {
        match table.thresholds[j] {
            Some(t) => {
                for v in out.values.column_mut(j).iter_mut() {
                    if *v < t {
                        *v = t * half;
                        count += 1;
                    }
                }
            }
            None => {
                if table.values.column(j).iter().any(|v| *v <= T::zero()) {
                    return Err(SpeError::MissingThreshold { column: table.columns[j].clone() });
                }
            }
        }
    }
    Ok((out, count))
}

fn check_positive<T: Real>(table: &CompositionTable<T>) -> Result<()> {
    for j in 0..table.ncols() {
        if let Some(i) = table.values.column(j).iter().position(|v| !(*v > T::zero())) {
            return Err(SpeError::NonpositiveComponent { row: i, column: table.columns[j].clone() });
        }
    }
    Ok(())
}

/// Closes the subcomposition formed by `columns`: each selected value is
/// divided by its row's sum over the selected columns. Other columns are left
/// as they are.
pub fn subcomposition_normalize<T: Real>(table: &CompositionTable<T>, columns: &[&str]) -> Result<CompositionTable<T>> {
    let idx = columns.iter().map(|c| table.column_index(c)).collect::<Result<Vec<_>>>()?;
    if idx.is_empty() {
        return Err(SpeError::InvalidParameter("subcomposition needs at least one column".into()));
    }
    for &j in &idx {
        if let Some(i) = table.values.column(j).iter().position(|v| !(*v > T::zero())) {
            return Err(SpeError::NonpositiveComponent { row: i, column: table.columns[j].clone() });
        }
    }
    let mut out = table.clone();
    for i in 0..table.nrows() {
        let s = idx.iter().fold(T::zero(), |acc, &j| acc + table.values[(i, j)]);
        for &j in &idx {
            out.values[(i, j)] = table.values[(i, j)] / s;
        }
    }
    Ok(out)
}

/// `log(Z_j / Z_d)` for every column `j ≠ d`, order preserved. Returns the
/// `n × (k−1)` matrix and names of the form `log(Zj/Zd)`.
pub fn log_ratio_transform<T: Real>(table: &CompositionTable<T>, denominator: &str) -> Result<(DMatrix<T>, Vec<String>)> {
    check_positive(table)?;
    let d = table.column_index(denominator)?;
    let keep: Vec<usize> = (0..table.ncols()).filter(|&j| j != d).collect();
    let x = DMatrix::from_fn(table.nrows(), keep.len(), |i, c| (table.values[(i, keep[c])] / table.values[(i, d)]).ln());
    let names = keep.iter().map(|&j| format!("log({}/{})", table.columns[j], denominator)).collect();
    Ok((x, names))
}

/// Upper end of the concentration scale (parts per million).
pub const PPM_SCALE: f64 = 1e6;

/// `log(v / (10⁶ − v))` for concentrations in parts per million.
pub fn response_transform<T: Real>(values: &[T]) -> Result<Vec<T>> {
    let top = T::lit(PPM_SCALE);
    values
        .iter()
        .map(|&v| {
            if v > T::zero() && v < top {
                Ok((v / (top - v)).ln())
            } else {
                Err(SpeError::OutOfRange(v.as_f64()))
            }
        })
        .collect()
}

/// Names of the major-element columns of the synthetic geochemical table.
pub const MAJOR_ELEMENTS: [&str; 11] = ["SiO2", "TiO2", "Al2O3", "Fe2O3", "MnO", "MgO", "CaO", "Na2O", "K2O", "P2O5", "SO3"];

/// A synthetic geochemical survey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeochemSample {
    pub sx: f64,
    pub sy: f64,
    /// Weight percent of each entry of [`MAJOR_ELEMENTS`].
    pub majors: Vec<f64>,
    /// Total rare-earth concentration in ppm.
    pub ree_ppm: f64,
}

/// Detection threshold (weight percent) used for TiO2 in the synthetic table.
pub const TIO2_THRESHOLD: f64 = 0.02;

/// Generates `n` samples at `locations` distinct sites shaped like a small
/// geochemical survey: repeated samples per site, spatially smooth log-ratio
/// structure, a handful of TiO2 values below detection (reported as 0), and a
/// response driven by a few log-ratios.
pub fn synthetic_geochem(n: usize, locations: usize, seed: u64) -> Vec<GeochemSample> {
    let mut rng = rng_for(seed, 0);
    let sites: Vec<[f64; 2]> = (0..locations).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    // Site-level smooth fields: a few random cosine waves per component.
    let k = MAJOR_ELEMENTS.len();
    let base = [4.2, -0.2, 2.6, 1.6, -1.0, 0.9, 1.4, 1.0, 1.1, -0.6, -1.5];
    let waves: Vec<[f64; 4]> = (0..k)
        .map(|_| [standard_normal::<f64, _>(&mut rng) * 0.4, rng.random::<f64>() * 6.0, rng.random::<f64>() * 6.0, rng.random::<f64>() * std::f64::consts::TAU])
        .collect();
    let mut samples = Vec::with_capacity(n);
    let mut below = 0;
    for i in 0..n {
        let s = sites[i % locations];
        let mut logs: Vec<f64> = (0..k)
            .map(|j| {
                let w = waves[j];
                base[j] + w[0] * (w[1] * s[0] + w[2] * s[1] + w[3]).cos() + 0.25 * standard_normal::<f64, _>(&mut rng)
            })
            .collect();
        // TiO2 drops below detection in three samples.
        if below < 3 && i % 17 == 5 {
            logs[1] = -12.0;
            below += 1;
        }
        let total: f64 = logs.iter().map(|l| l.exp()).sum();
        let mut majors: Vec<f64> = logs.iter().map(|l| 100.0 * l.exp() / total).collect();
        if majors[1] < TIO2_THRESHOLD {
            majors[1] = 0.0;
        }
        let lr = |j: usize| logs[j] - logs[2];
        let eta = 0.8 * lr(8) + 0.6 * lr(9) - 0.5 * lr(5) - 0.4 * lr(0) + 0.3 * standard_normal::<f64, _>(&mut rng);
        let y = -8.0 + eta;
        let ree_ppm = PPM_SCALE / (1.0 + (-y).exp());
        samples.push(GeochemSample { sx: s[0], sy: s[1], majors, ree_ppm });
    }
    samples
}

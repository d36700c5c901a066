use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SpatialDataset;
use crate::envelope::fit::{fit_spe_from_full, SpeFit};
use crate::error::{Result, SpeError};
use crate::gls::{fit_full_model_kind, CorrelationKind, GlsFit};
use crate::optim::OptimOptions;
use crate::prediction::{cross_validate, CvModel};
use crate::scalar::Real;

/// Criterion used to choose the envelope dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Criterion {
    Aic,
    #[default]
    Bic,
    /// Mean squared prediction error of repeated `k`-fold cross-validation.
    Cv { k: usize, reps: usize, seed: u64 },
}

/// One candidate dimension. `fit` is `None` (and `error` set) when that fit failed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionRow<T: Real> {
    pub u: usize,
    pub fit: Option<SpeFit<T>>,
    pub cv_mspe: Option<T>,
    pub error: Option<String>,
}

impl<T: Real> SelectionRow<T> {
    /// Value of `criterion` for this row, if the fit succeeded.
    pub fn score(&self, criterion: Criterion) -> Option<T> {
        let fit = self.fit.as_ref()?;
        match criterion {
            Criterion::Aic => Some(fit.aic),
            Criterion::Bic => Some(fit.bic),
            Criterion::Cv { .. } => self.cv_mspe,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Selection<T: Real> {
    pub criterion: Criterion,
    pub u_hat: usize,
    pub rows: Vec<SelectionRow<T>>,
}

impl<T: Real> Selection<T> {
    /// The fit at the selected dimension.
    pub fn best(&self) -> &SpeFit<T> {
        self.rows[self.u_hat].fit.as_ref().expect("selected row has a fit")
    }
}

/// Fits every `u = 0..=p` with spatially correlated errors and picks the
/// minimizer of `criterion`.
pub fn select_dimension<T: Real>(data: &SpatialDataset<T>, criterion: Criterion, opts: &OptimOptions) -> Result<Selection<T>> {
    select_dimension_kind(data, criterion, CorrelationKind::Spatial, opts)
}

pub fn select_dimension_kind<T: Real>(
    data: &SpatialDataset<T>,
    criterion: Criterion,
    kind: CorrelationKind,
    opts: &OptimOptions,
) -> Result<Selection<T>> {
    let full = fit_full_model_kind(data, kind, opts)?;
    select_from_full(data, criterion, &full, opts)
}

/// Selection reusing an existing full-model fit (its correlation kind and
/// parameters seed every candidate).
pub fn select_from_full<T: Real>(
    data: &SpatialDataset<T>,
    criterion: Criterion,
    full: &GlsFit<T>,
    opts: &OptimOptions,
) -> Result<Selection<T>> {
    let p = data.p();
    let kind = full.kind;
    let rows: Vec<SelectionRow<T>> = (0..=p)
        .into_par_iter()
        .map(|u| {
            let fitted = fit_spe_from_full(data, u, kind, full, opts).and_then(|fit| {
                let cv = match criterion {
                    Criterion::Cv { k, reps, seed } => {
                        let report = cross_validate(data, k, reps, seed, &[CvModel::SpeFixed(u)], kind, opts)?;
                        Some(report.mean_mspe[0].1)
                    }
                    _ => None,
                };
                Ok((fit, cv))
            });
            match fitted {
                Ok((fit, cv_mspe)) => SelectionRow { u, fit: Some(fit), cv_mspe, error: None },
                Err(e) => {
                    warn!("dimension u = {u} failed: {e}");
                    SelectionRow { u, fit: None, cv_mspe: None, error: Some(e.to_string()) }
                }
            }
        })
        .collect();
    let u_hat = rows
        .iter()
        .filter_map(|row| row.score(criterion).filter(|s| s.is_finite()).map(|s| (row.u, s)))
        .fold(None::<(usize, T)>, |best, (u, s)| match best {
            Some((_, b)) if b <= s => best,
            _ => Some((u, s)),
        })
        .map(|(u, _)| u)
        .ok_or_else(|| {
            let msgs: Vec<String> = rows.iter().filter_map(|r| r.error.as_ref().map(|e| format!("u={}: {e}", r.u))).collect();
            SpeError::AllFitsFailed(msgs.join("; "))
        })?;
    Ok(Selection { criterion, u_hat, rows })
}

//! Regression-kriging prediction, MSPE and repeated k-fold cross-validation.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SpatialDataset;
use crate::envelope::{select_dimension_kind, Criterion, SpeFit};
use crate::envelope::fit_spe_kind;
use crate::error::{Result, SpeError};
use crate::gls::{fit_full_model_kind, CorrelationKind, GlsFit};
use crate::optim::OptimOptions;
use crate::scalar::Real;
use crate::spatial::{build_correlation, cross_correlation, rng_for, CorrelationParams, SiteSet};

/// A fitted linear trend with spatially correlated errors.
pub trait RegressionSurface<T: Real> {
    /// `r`-vector intercept `μ_{Y|X}`.
    fn intercept(&self) -> &DVector<T>;
    /// `p × r` coefficients.
    fn coefficients(&self) -> &DMatrix<T>;
    fn correlation(&self) -> CorrelationParams<T>;
    fn correlation_kind(&self) -> CorrelationKind;
}

impl<T: Real> RegressionSurface<T> for SpeFit<T> {
    fn intercept(&self) -> &DVector<T> {
        &self.mu_ygx
    }
    fn coefficients(&self) -> &DMatrix<T> {
        &self.beta
    }
    fn correlation(&self) -> CorrelationParams<T> {
        self.theta
    }
    fn correlation_kind(&self) -> CorrelationKind {
        self.kind
    }
}

impl<T: Real> RegressionSurface<T> for GlsFit<T> {
    fn intercept(&self) -> &DVector<T> {
        &self.mu_ygx
    }
    fn coefficients(&self) -> &DMatrix<T> {
        &self.beta
    }
    fn correlation(&self) -> CorrelationParams<T> {
        self.theta
    }
    fn correlation_kind(&self) -> CorrelationKind {
        self.kind
    }
}

/// Training data plus the locations and predictors to predict at.
#[derive(Debug, Clone)]
pub struct PredictionRequest<T: Real> {
    pub train: SpatialDataset<T>,
    pub test_sites: SiteSet<T>,
    pub test_x: DMatrix<T>,
}

impl<T: Real> PredictionRequest<T> {
    pub fn new(train: SpatialDataset<T>, test_sites: SiteSet<T>, test_x: DMatrix<T>) -> Result<Self> {
        if test_x.ncols() != train.p() {
            return Err(SpeError::DimensionError(format!("test X has {} columns, expected {}", test_x.ncols(), train.p())));
        }
        if test_x.nrows() != test_sites.len() {
            return Err(SpeError::DimensionError(format!(
                "{} test sites but test X has {} rows",
                test_sites.len(),
                test_x.nrows()
            )));
        }
        Ok(Self { train, test_sites, test_x })
    }
}

fn trend<T: Real>(fit: &impl RegressionSurface<T>, x: &DMatrix<T>) -> DMatrix<T> {
    let mut out = x * fit.coefficients();
    for mut row in out.row_iter_mut() {
        row += fit.intercept().transpose();
    }
    out
}

/// `μ̂ + X_test β̂ + R_ts R_tt⁻¹ (Y_train − μ̂ − X_train β̂)`, an `m × r` matrix.
pub fn krige_predict<T: Real>(fit: &impl RegressionSurface<T>, req: &PredictionRequest<T>) -> Result<DMatrix<T>> {
    let p = req.train.p();
    let r = req.train.r();
    if fit.coefficients().nrows() != p || fit.coefficients().ncols() != r || fit.intercept().len() != r {
        return Err(SpeError::DimensionError(format!("fit is {}x{}, data has p = {p}, r = {r}", fit.coefficients().nrows(), fit.coefficients().ncols())));
    }
    let mean = trend(fit, &req.test_x);
    let theta = match fit.correlation_kind() {
        CorrelationKind::Independent => return Ok(mean),
        CorrelationKind::Spatial => fit.correlation(),
    };
    if theta.tau == T::one() {
        return Ok(mean);
    }
    let resid = &req.train.y - trend(fit, &req.train.x);
    let factor = build_correlation(&req.train.sites, &theta)?;
    let r_ts = cross_correlation(&req.train.sites.cross_distances(&req.test_sites), &theta);
    Ok(mean + r_ts * factor.solve(&resid))
}

/// `(1/N) Σ (ŷ − y)²` over all `N = m·r` entries.
pub fn mspe<T: Real>(pred: &DMatrix<T>, actual: &DMatrix<T>) -> Result<T> {
    if pred.shape() != actual.shape() {
        return Err(SpeError::DimensionError(format!("prediction is {:?}, actual is {:?}", pred.shape(), actual.shape())));
    }
    if pred.is_empty() {
        return Err(SpeError::DimensionError("no predictions".into()));
    }
    let ss = pred.iter().zip(actual.iter()).fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
    Ok(ss / T::from_count(pred.len()))
}

/// A model compared by cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CvModel {
    /// Envelope model at a fixed dimension.
    SpeFixed(usize),
    /// Envelope model with the dimension re-selected on every training fold.
    SpeSelect(Criterion),
    /// Full spatial regression.
    Gls,
}

impl CvModel {
    /// Stable label used in reports.
    pub fn label(&self) -> String {
        match self {
            CvModel::SpeFixed(u) => format!("spe_u{u}"),
            CvModel::SpeSelect(Criterion::Aic) => "spe_aic".into(),
            CvModel::SpeSelect(Criterion::Bic) => "spe_bic".into(),
            CvModel::SpeSelect(Criterion::Cv { .. }) => "spe_cv".into(),
            CvModel::Gls => "gls".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRecord<T> {
    pub model: String,
    pub rep: usize,
    pub fold: usize,
    pub mspe: T,
    /// Envelope dimension used on this fold (absent for GLS).
    pub u: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport<T> {
    pub k: usize,
    pub reps: usize,
    pub seed: u64,
    pub n: usize,
    /// `folds[rep][i]` is the fold of observation `i` in repetition `rep`.
    pub folds: Vec<Vec<usize>>,
    pub records: Vec<CvRecord<T>>,
    /// Per model, the mean of the per-repetition MSPEs.
    pub mean_mspe: Vec<(String, T)>,
    /// Per model and repetition, the MSPE pooled over that repetition's folds.
    pub rep_mspe: Vec<(String, Vec<T>)>,
    /// `(1/(n·r)) Σ (Y − Ȳ)²` with column means.
    pub response_variance: T,
}

/// Fold of each observation: a seeded shuffle dealt round-robin into `k` folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64, rep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(seed, 0xc0ff_ee00_0000 + rep as u64);
    order.shuffle(&mut rng);
    let mut folds = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k;
    }
    folds
}

fn predict_fold<T: Real>(
    model: CvModel,
    train: &SpatialDataset<T>,
    test: &SpatialDataset<T>,
    kind: CorrelationKind,
    opts: &OptimOptions,
) -> Result<(T, Option<usize>)> {
    let req = PredictionRequest::new(train.clone(), test.sites.clone(), test.x.clone())?;
    let (pred, u) = match model {
        CvModel::SpeFixed(u) => (krige_predict(&fit_spe_kind(train, u, kind, opts)?, &req)?, Some(u)),
        CvModel::SpeSelect(c) => {
            let sel = select_dimension_kind(train, c, kind, opts)?;
            (krige_predict(sel.best(), &req)?, Some(sel.u_hat))
        }
        CvModel::Gls => (krige_predict(&fit_full_model_kind(train, kind, opts)?, &req)?, None),
    };
    Ok((mspe(&pred, &test.y)?, u))
}

/// Repeated `k`-fold cross-validation. Every fold refits the correlation
/// parameters and the envelope on its training part.
pub fn cross_validate<T: Real>(
    data: &SpatialDataset<T>,
    k: usize,
    reps: usize,
    seed: u64,
    models: &[CvModel],
    kind: CorrelationKind,
    opts: &OptimOptions,
) -> Result<CvReport<T>> {
    let n = data.n();
    if k < 2 || k > n {
        return Err(SpeError::InvalidParameter(format!("need 2 <= k <= n (k = {k}, n = {n})")));
    }
    if reps == 0 || models.is_empty() {
        return Err(SpeError::InvalidParameter("need at least one repetition and one model".into()));
    }
    let folds: Vec<Vec<usize>> = (0..reps).map(|rep| fold_assignment(n, k, seed, rep)).collect();
    let jobs: Vec<(usize, usize, usize)> = (0..models.len())
        .flat_map(|m| (0..reps).flat_map(move |rep| (0..k).map(move |f| (m, rep, f))))
        .collect();
    let results: Vec<Result<(T, Option<usize>, usize)>> = jobs
        .par_iter()
        .map(|&(m, rep, f)| {
            let test_idx: Vec<usize> = (0..n).filter(|&i| folds[rep][i] == f).collect();
            let train_idx: Vec<usize> = (0..n).filter(|&i| folds[rep][i] != f).collect();
            let train = data.subset(&train_idx);
            let test = data.subset(&test_idx);
            predict_fold(models[m], &train, &test, kind, opts)
                .map(|(v, u)| (v, u, test_idx.len()))
                .map_err(|e| SpeError::FoldFailure { fold: f, source: Box::new(e) })
        })
        .collect();

    let mut records = Vec::with_capacity(jobs.len());
    let mut rep_mspe: Vec<(String, Vec<T>)> = models.iter().map(|m| (m.label(), vec![T::zero(); reps])).collect();
    let mut rep_counts = vec![vec![0usize; reps]; models.len()];
    for (&(m, rep, fold), res) in jobs.iter().zip(results) {
        let (v, u, m_test) = res?;
        records.push(CvRecord { model: models[m].label(), rep, fold, mspe: v, u });
        // Pool squared errors over the repetition, weighting folds by size.
        rep_mspe[m].1[rep] += v * T::from_count(m_test);
        rep_counts[m][rep] += m_test;
    }
    for (m, (_, per_rep)) in rep_mspe.iter_mut().enumerate() {
        for (rep, v) in per_rep.iter_mut().enumerate() {
            *v /= T::from_count(rep_counts[m][rep]);
        }
    }
    let mean_mspe = rep_mspe
        .iter()
        .map(|(label, v)| (label.clone(), v.iter().fold(T::zero(), |a, &b| a + b) / T::from_count(reps)))
        .collect();
    Ok(CvReport { k, reps, seed, n, folds, records, mean_mspe, rep_mspe, response_variance: response_variance(&data.y) })
}

/// Sample variance of the response entries about their column means, divided by `n·r`.
pub fn response_variance<T: Real>(y: &DMatrix<T>) -> T {
    let n = T::from_count(y.nrows());
    let mut ss = T::zero();
    for col in y.column_iter() {
        let mean = col.sum() / n;
        ss += col.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean));
    }
    ss / T::from_count(y.len())
}

//! Monte-Carlo harness for the five simulation scenarios: data generation,
//! envelope / independence-envelope / full-regression fits, error metrics and
//! summaries.
//!
//! Replicate `i` draws everything from the stream `i` of the configured seed,
//! so results do not depend on scheduling. Fixed bases and fixed sites are
//! drawn once from a dedicated stream.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{avar_beta, StructuralParams};
use crate::envelope::{fit_spe_from_full, select_from_full, Criterion, EnvelopeBasis, SpeFit};
use crate::error::{Result, SpeError};
use crate::gls::{fit_full_model_kind, CorrelationKind};
use crate::linalg::orthonormal_complement;
use crate::optim::OptimOptions;
use crate::scalar::Real;
use crate::spatial::{build_correlation, rng_for, sample_joint_gp_with, standard_normal, CorrelationParams, JointModelParams, SiteSet};

/// Stream reserved for draws shared by all replicates.
const SHARED_STREAM: u64 = u64::MAX;

/// Haar-distributed `p × u` matrix with orthonormal columns.
pub fn random_orthobasis<T: Real>(p: usize, u: usize, seed: u64) -> Result<DMatrix<T>> {
    if u == 0 || u > p {
        return Err(SpeError::DimensionError(format!("need 1 <= u <= p (u = {u}, p = {p})")));
    }
    Ok(random_orthobasis_with(p, u, &mut rng_for(seed, 0)))
}

/// QR of a standard normal matrix with the signs of `R`'s diagonal moved into `Q`.
pub fn random_orthobasis_with<T: Real, R: Rng + ?Sized>(p: usize, u: usize, rng: &mut R) -> DMatrix<T> {
    let mut g = DMatrix::<T>::zeros(p, u);
    for i in 0..p {
        for j in 0..u {
            g[(i, j)] = standard_normal(rng);
        }
    }
    let qr = g.qr();
    let rmat = qr.r();
    let mut q = qr.q().columns(0, u).into_owned();
    for j in 0..u {
        if rmat[(j, j)] < T::zero() {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Angle (radians) between the column spaces of two orthonormal `p × u`
/// matrices: the arc-cosine of the largest singular value of `AᵀB`.
///
/// Evaluated as `atan2(σ_min((I − AAᵀ)B), σ_max(AᵀB))`; the sines and cosines
/// of the principal angles pair up, and the two-argument form stays accurate
/// for nearly equal subspaces where `arccos` alone would not.
pub fn subspace_angle<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<T> {
    if a.shape() != b.shape() {
        return Err(SpeError::DimensionError(format!("bases are {:?} and {:?}", a.shape(), b.shape())));
    }
    if a.ncols() == 0 {
        return Ok(T::zero());
    }
    let cross = a.transpose() * b;
    let cos = cross.singular_values().max().max(T::zero()).min(T::one());
    let resid = b - a * cross;
    let sin = resid.singular_values().min().max(T::zero()).min(T::one());
    Ok(sin.atan2(cos))
}

/// Diagonal of `Σ_X` in the envelope coordinates (first `u` entries form `Ω₁`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OmegaSpec {
    Fixed(Vec<f64>),
    /// Every entry drawn from `Uniform[lo, hi]` afresh for each replicate.
    Uniform { lo: f64, hi: f64 },
}

/// How the envelope dimension is chosen in each replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DimensionChoice {
    Fixed,
    Select(Criterion),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scenario: u8,
    pub n: usize,
    pub p: usize,
    pub u_true: usize,
    pub r: usize,
    pub omega: OmegaSpec,
    /// `u × r`, column-major.
    pub eta: Vec<f64>,
    /// `r × r`, column-major.
    pub sigma_ygx: Vec<f64>,
    pub tau: f64,
    pub lambda: f64,
    pub reps: usize,
    pub seed: u64,
    pub fixed_basis: bool,
    pub fixed_sites: bool,
    pub dimension: DimensionChoice,
    /// Also fit the envelope model that ignores spatial correlation.
    pub include_pe: bool,
    pub opts: OptimOptions,
}

/// `exp(−j^{2/3})` for `j = from..=to`.
pub fn decaying_eigenvalues(from: usize, to: usize) -> Vec<f64> {
    (from..=to).map(|j| (-(j as f64).powf(2.0 / 3.0)).exp()).collect()
}

impl SimConfig {
    /// Scenario presets. 1: fixed `u = 3`; 2: as 1 with BIC selection;
    /// 3: `u = p`; 4: uniform random eigenvalues; 5: as 1 with basis and
    /// sites held fixed across replicates.
    pub fn preset(scenario: u8, n: usize, reps: usize, seed: u64) -> Result<Self> {
        let base = SimConfig {
            scenario,
            n,
            p: 10,
            u_true: 3,
            r: 1,
            omega: OmegaSpec::Fixed(decaying_eigenvalues(1, 10)),
            eta: vec![1.0; 3],
            sigma_ygx: vec![0.05],
            tau: 0.1,
            lambda: 0.3,
            reps,
            seed,
            fixed_basis: false,
            fixed_sites: false,
            dimension: DimensionChoice::Fixed,
            include_pe: true,
            opts: OptimOptions { seed, ..OptimOptions::default() },
        };
        let cfg = match scenario {
            1 => base,
            2 => SimConfig { dimension: DimensionChoice::Select(Criterion::Bic), ..base },
            3 => SimConfig { u_true: 10, eta: vec![1.0; 10], dimension: DimensionChoice::Select(Criterion::Bic), ..base },
            4 => SimConfig {
                omega: OmegaSpec::Uniform { lo: 0.0, hi: 1.0 },
                dimension: DimensionChoice::Select(Criterion::Bic),
                ..base
            },
            5 => SimConfig { fixed_basis: true, fixed_sites: true, include_pe: false, ..base },
            _ => return Err(SpeError::InvalidParameter(format!("unknown scenario {scenario}"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let (p, u, r) = (self.p, self.u_true, self.r);
        if p == 0 || r == 0 || u > p {
            return Err(SpeError::DimensionError(format!("invalid p = {p}, u = {u}, r = {r}")));
        }
        if self.eta.len() != u * r || self.sigma_ygx.len() != r * r {
            return Err(SpeError::DimensionError("η must be u×r and Σ_{Y|X} r×r".into()));
        }
        if let OmegaSpec::Fixed(w) = &self.omega {
            if w.len() != p || w.iter().any(|&v| !(v > 0.0)) {
                return Err(SpeError::InvalidParameter("Ω diagonal needs p positive entries".into()));
            }
        }
        if let OmegaSpec::Uniform { lo, hi } = self.omega {
            if !(lo >= 0.0 && hi > lo) {
                return Err(SpeError::InvalidParameter("uniform Ω bounds need 0 <= lo < hi".into()));
            }
        }
        CorrelationParams::new(self.tau, self.lambda)?;
        if self.reps == 0 {
            return Err(SpeError::InvalidParameter("reps must be positive".into()));
        }
        if self.n <= p + r + 1 {
            return Err(SpeError::RankDeficiency(format!("n = {} must exceed p + r + 1", self.n)));
        }
        Ok(())
    }

    fn theta<T: Real>(&self) -> CorrelationParams<T> {
        CorrelationParams { tau: T::lit(self.tau), lambda: T::lit(self.lambda) }
    }

    /// True parameters for one replicate given its basis and eigenvalue draws.
    fn truth<T: Real>(&self, gamma1: DMatrix<T>, omega: &[f64]) -> Result<(StructuralParams<T>, JointModelParams<T>)> {
        let (p, u, r) = (self.p, self.u_true, self.r);
        let gamma0 = orthonormal_complement(&gamma1);
        let om1 = DMatrix::from_fn(u, u, |i, j| if i == j { T::lit(omega[i]) } else { T::zero() });
        let om0 = DMatrix::from_fn(p - u, p - u, |i, j| if i == j { T::lit(omega[u + i]) } else { T::zero() });
        let eta = DMatrix::from_iterator(u, r, self.eta.iter().map(|&v| T::lit(v)));
        let sigma = DMatrix::from_iterator(r, r, self.sigma_ygx.iter().map(|&v| T::lit(v)));
        let joint = JointModelParams::from_envelope(
            &gamma1,
            &gamma0,
            &om1,
            &om0,
            &eta,
            &sigma,
            &DVector::zeros(r),
            &DVector::zeros(p),
        )?;
        let basis = EnvelopeBasis { gamma1, gamma0 };
        Ok((StructuralParams::new(sigma, eta, basis, om1, om0)?, joint))
    }
}

fn uniform_sites<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<SiteSet<T>> {
    let coords = (0..n).map(|_| [T::lit(rng.random::<f64>()), T::lit(rng.random::<f64>())]).collect();
    SiteSet::new(coords)
}

fn draw_basis<T: Real, R: Rng + ?Sized>(p: usize, u: usize, rng: &mut R) -> DMatrix<T> {
    if u == 0 {
        DMatrix::zeros(p, 0)
    } else if u == p {
        // Any orthonormal basis spans the whole space.
        DMatrix::identity(p, p)
    } else {
        random_orthobasis_with(p, u, rng)
    }
}

/// Metrics of one replicate. `None` marks a metric that does not apply
/// (angles are only defined when the fitted dimension equals the true one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub rep: usize,
    pub spe_angle: Option<f64>,
    pub pe_angle: Option<f64>,
    pub spe_error: Option<f64>,
    pub pe_error: Option<f64>,
    pub gls_error: Option<f64>,
    pub spe_u: Option<usize>,
    pub pe_u: Option<usize>,
    /// First coefficient of the envelope estimate.
    pub spe_beta1: Option<f64>,
    pub tau_hat: Option<f64>,
    pub lambda_hat: Option<f64>,
    pub error: Option<String>,
}

impl ReplicateRecord {
    fn failed(rep: usize, e: &SpeError) -> Self {
        Self {
            rep,
            spe_angle: None,
            pe_angle: None,
            spe_error: None,
            pe_error: None,
            gls_error: None,
            spe_u: None,
            pe_u: None,
            spe_beta1: None,
            tau_hat: None,
            lambda_hat: None,
            error: Some(format!("{}: {e}", e.name())),
        }
    }
}

/// Mean and standard error (`sd / √count`) of one metric for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub metric: String,
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

/// Asymptotic normal density for the first coefficient at the true parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvarOverlay {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub config: SimConfig,
    pub records: Vec<ReplicateRecord>,
    pub summary: Vec<SummaryRow>,
    pub failures: usize,
    /// Frequency of each selected dimension `0..=p` (selection scenarios).
    pub u_counts: Option<Vec<usize>>,
    /// Present when basis and sites are fixed, so the truth is one model.
    pub overlay: Option<AvarOverlay>,
}

impl SimResult {
    pub fn summary_value(&self, method: &str, metric: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.method == method && s.metric == metric)
    }

    /// Envelope estimates of the first coefficient over successful replicates.
    pub fn beta1_values(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.spe_beta1).collect()
    }
}

fn beta_error<T: Real>(est: &DMatrix<T>, truth: &DMatrix<T>) -> f64 {
    (est - truth).norm_squared().as_f64()
}

fn fit_dimension<T: Real>(
    cfg: &SimConfig,
    data: &crate::dataset::SpatialDataset<T>,
    kind: CorrelationKind,
    full: &crate::gls::GlsFit<T>,
) -> Result<SpeFit<T>> {
    match cfg.dimension {
        DimensionChoice::Fixed => fit_spe_from_full(data, cfg.u_true, kind, full, &cfg.opts),
        DimensionChoice::Select(c) => Ok(select_from_full(data, c, full, &cfg.opts)?.best().clone()),
    }
}

fn run_replicate<T: Real>(
    cfg: &SimConfig,
    rep: usize,
    shared: &(Option<DMatrix<T>>, Option<SiteSet<T>>),
) -> Result<ReplicateRecord> {
    let mut rng = rng_for(cfg.seed, rep as u64);
    let (p, u) = (cfg.p, cfg.u_true);
    let gamma1 = match &shared.0 {
        Some(g) => g.clone(),
        None => draw_basis(p, u, &mut rng),
    };
    let sites = match &shared.1 {
        Some(s) => s.clone(),
        None => uniform_sites(cfg.n, &mut rng)?,
    };
    let omega: Vec<f64> = match &cfg.omega {
        OmegaSpec::Fixed(w) => w.clone(),
        OmegaSpec::Uniform { lo, hi } => (0..p).map(|_| rng.random_range(*lo..*hi)).collect(),
    };
    let (truth, joint) = cfg.truth::<T>(gamma1, &omega)?;
    let factor = build_correlation(&sites, &cfg.theta())?;
    let data = sample_joint_gp_with(&sites, &factor, &joint, &mut rng)?;
    let beta = truth.beta();

    let full = fit_full_model_kind(&data, CorrelationKind::Spatial, &cfg.opts)?;
    let spe = fit_dimension(cfg, &data, CorrelationKind::Spatial, &full)?;
    let angle_of = |fit: &SpeFit<T>| -> Result<Option<f64>> {
        if fit.u == u && u > 0 {
            Ok(Some(subspace_angle(&fit.basis.gamma1, &truth.basis.gamma1)?.as_f64()))
        } else {
            Ok(None)
        }
    };
    let mut rec = ReplicateRecord {
        rep,
        spe_angle: angle_of(&spe)?,
        pe_angle: None,
        spe_error: Some(beta_error(&spe.beta, &beta)),
        pe_error: None,
        gls_error: Some(beta_error(&full.beta, &beta)),
        spe_u: Some(spe.u),
        pe_u: None,
        spe_beta1: Some(spe.beta[(0, 0)].as_f64()),
        tau_hat: Some(spe.theta.tau.as_f64()),
        lambda_hat: Some(spe.theta.lambda.as_f64()),
        error: None,
    };
    if cfg.include_pe {
        let full_pe = fit_full_model_kind(&data, CorrelationKind::Independent, &cfg.opts)?;
        let pe = fit_dimension(cfg, &data, CorrelationKind::Independent, &full_pe)?;
        rec.pe_angle = angle_of(&pe)?;
        rec.pe_error = Some(beta_error(&pe.beta, &beta));
        rec.pe_u = Some(pe.u);
    }
    Ok(rec)
}

fn summarize(method: &str, metric: &str, values: impl Iterator<Item = f64>) -> Option<SummaryRow> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return None;
    }
    let count = v.len();
    let mean = v.iter().sum::<f64>() / count as f64;
    let sd = if count > 1 {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (count - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(SummaryRow { method: method.into(), metric: metric.into(), mean, se: sd / (count as f64).sqrt(), count })
}

/// Runs every replicate of a scenario in scalar type `T`; results are `f64`.
///
/// Failed replicates are logged and excluded; more than 5% failures abort.
pub fn run_scenario<T: Real>(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let mut shared_rng = rng_for(cfg.seed, SHARED_STREAM);
    let shared_basis = cfg.fixed_basis.then(|| draw_basis::<T, _>(cfg.p, cfg.u_true, &mut shared_rng));
    let shared_sites = if cfg.fixed_sites { Some(uniform_sites::<T, _>(cfg.n, &mut shared_rng)?) } else { None };
    let shared = (shared_basis, shared_sites);

    let records: Vec<ReplicateRecord> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            run_replicate(cfg, rep, &shared).unwrap_or_else(|e| {
                warn!("replicate {rep} failed: {e}");
                ReplicateRecord::failed(rep, &e)
            })
        })
        .collect();
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    if failures * 20 > cfg.reps {
        return Err(SpeError::TooManyFailures { failed: failures, total: cfg.reps });
    }

    let mut summary = Vec::new();
    type Getter = fn(&ReplicateRecord) -> Option<f64>;
    let metrics: [(&str, &str, Getter); 5] = [
        ("SPE", "angle", |r| r.spe_angle),
        ("PE", "angle", |r| r.pe_angle),
        ("SPE", "beta_sq_error", |r| r.spe_error),
        ("PE", "beta_sq_error", |r| r.pe_error),
        ("GLS", "beta_sq_error", |r| r.gls_error),
    ];
    for (method, metric, get) in metrics {
        summary.extend(summarize(method, metric, records.iter().filter_map(get)));
    }
    summary.extend(summarize("SPE", "beta1", records.iter().filter_map(|r| r.spe_beta1)));

    let u_counts = matches!(cfg.dimension, DimensionChoice::Select(_)).then(|| {
        let mut counts = vec![0; cfg.p + 1];
        for u in records.iter().filter_map(|r| r.spe_u) {
            counts[u] += 1;
        }
        counts
    });

    let overlay = match (&shared.0, cfg.fixed_sites, &cfg.omega) {
        (Some(g1), true, OmegaSpec::Fixed(w)) => {
            let (truth, _) = cfg.truth::<T>(g1.clone(), w)?;
            let av = avar_beta(&truth)?;
            Some(AvarOverlay {
                mean: truth.beta()[(0, 0)].as_f64(),
                sd: (av[(0, 0)].as_f64() / cfg.n as f64).sqrt(),
            })
        }
        _ => None,
    };
    Ok(SimResult { config: cfg.clone(), records, summary, failures, u_counts, overlay })
}

/// Equal-width histogram over `[min, max]` of the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Histogram { edges: vec![0.0; bins + 1], counts: vec![0; bins] };
    }
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
    let mut counts = vec![0; bins];
    for v in finite {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Histogram { edges, counts }
}

//! Spatial predictor envelope.
//!
//! Envelope dimension reduction of the predictors in a spatial linear
//! regression whose responses and predictors follow a separable Gaussian
//! process with exponential-plus-nugget correlation. The crate provides the
//! full-model GLS baseline, maximum-likelihood envelope fitting and dimension
//! selection, asymptotic variances, regression kriging with cross-validation,
//! a simulation harness, and compositional-data preparation.
//!
//! All numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix `f64`.

pub mod asymptotics;
pub mod compositional;
pub mod dataset;
pub mod envelope;
pub mod error;
pub mod gls;
pub mod linalg;
pub mod optim;
pub mod prediction;
pub mod scalar;
pub mod simulation;
pub mod spatial;

pub use dataset::SpatialDataset;
pub use envelope::{fit_spe, select_dimension, Criterion, EnvelopeBasis, Selection, SpeFit};
pub use error::{Result, SpeError};
pub use gls::{fit_full_model, CorrelationKind, GlsFit};
pub use optim::OptimOptions;
pub use scalar::Real;
pub use spatial::{CorrelationParams, SiteSet};

/// `f64` instantiations.
pub type Dataset = SpatialDataset<f64>;
pub type Sites = SiteSet<f64>;
pub type Theta = CorrelationParams<f64>;
pub type Basis = EnvelopeBasis<f64>;
pub type Fit = SpeFit<f64>;
pub type FullFit = GlsFit<f64>;
pub type Report = prediction::CvReport<f64>;
pub type DimensionSelection = Selection<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;

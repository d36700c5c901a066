//! Spatial predictor envelope: basis parameterizations, the profiled
//! objective, joint fitting and dimension selection.

mod basis;
mod fit;
mod objective;
mod select;

pub use basis::{pivot_rows, recover_basis, CoordinateParam, EnvelopeBasis};
pub use fit::{envelope_estimates, fit_spe, fit_spe_from_full, fit_spe_kind, gls_as_envelope, gls_fit_at_theta, SpeFit};
pub use objective::{spe_objective, spe_objective_unconstrained};
pub use select::{select_dimension, select_dimension_kind, select_from_full, Criterion, Selection, SelectionRow};

use nalgebra::DMatrix;

use crate::error::{Result, SpeError};
use crate::scalar::Real;
use crate::spatial::SiteSet;

/// `n` sites with an `n × r` response matrix and an `n × p` predictor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDataset<T: Real> {
    pub sites: SiteSet<T>,
    pub y: DMatrix<T>,
    pub x: DMatrix<T>,
}

impl<T: Real> SpatialDataset<T> {
    pub fn new(sites: SiteSet<T>, y: DMatrix<T>, x: DMatrix<T>) -> Result<Self> {
        let n = sites.len();
        if y.nrows() != n || x.nrows() != n {
            return Err(SpeError::DimensionError(format!(
                "{n} sites but Y has {} rows and X has {} rows",
                y.nrows(),
                x.nrows()
            )));
        }
        if y.ncols() == 0 || x.ncols() == 0 {
            return Err(SpeError::DimensionError("need r >= 1 and p >= 1".into()));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(SpeError::InvalidParameter("data contain non-finite values".into()));
        }
        Ok(Self { sites, y, x })
    }

    pub fn n(&self) -> usize {
        self.sites.len()
    }

    pub fn r(&self) -> usize {
        self.y.ncols()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let y = self.y.select_rows(idx.iter());
        let x = self.x.select_rows(idx.iter());
        Self { sites: self.sites.subset(idx), y, x }
    }

    /// `[1 Y X]`, the design used for every adjusted cross-product.
    pub(crate) fn stacked(&self) -> DMatrix<T> {
        let n = self.n();
        let (r, p) = (self.r(), self.p());
        let mut d = DMatrix::zeros(n, 1 + r + p);
        d.column_mut(0).fill(T::one());
        d.view_mut((0, 1), (n, r)).copy_from(&self.y);
        d.view_mut((0, 1 + r), (n, p)).copy_from(&self.x);
        d
    }
}

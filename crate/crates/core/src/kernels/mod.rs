//! Exponential covariance kernel, covariance assembly, eigen-bases of
//! correlation matrices and robust variogram estimation.

mod basis;
mod variogram;

pub use basis::{exact_eigs, nystrom_eigs, select_landmarks, EigenBasis};
pub use variogram::{robust_variogram_wls, VariogramBin, VariogramFit, VariogramOptions};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{Site, SiteSet};
use crate::scalar::Real;

/// Exponential covariance `τ² exp(−d/r)` for `d > 0` and `τ² + σ²` at `d = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpKernelParams<T> {
    /// Spatial variance τ².
    pub tau2: T,
    /// Nugget variance σ².
    pub sigma2: T,
    /// Range r, in the dataset's coordinate unit.
    pub r: T,
}

impl<T: Real> ExpKernelParams<T> {
    pub fn new(tau2: T, sigma2: T, r: T) -> Result<Self> {
        if !(tau2 > T::zero() && tau2.is_finite()) {
            return Err(Error::Input(format!("tau2 must be positive, got {tau2:?}")));
        }
        if !(sigma2 >= T::zero() && sigma2.is_finite()) {
            return Err(Error::Input(format!("sigma2 must be non-negative, got {sigma2:?}")));
        }
        if !(r > T::zero() && r.is_finite()) {
            return Err(Error::Input(format!("range must be positive, got {r:?}")));
        }
        Ok(Self { tau2, sigma2, r })
    }

    /// Unit-sill correlation kernel with nugget share `nugget` in [0, 1).
    pub fn correlation(r: T, nugget: T) -> Result<Self> {
        Self::new(T::one() - nugget, nugget, r)
    }

    pub fn sill(&self) -> T {
        self.tau2 + self.sigma2
    }

    /// Covariance at distance `d` without input checks.
    #[inline]
    pub fn cov(&self, d: T) -> T {
        if d > T::zero() {
            self.tau2 * (-d / self.r).exp()
        } else {
            self.tau2 + self.sigma2
        }
    }

    #[inline]
    pub fn cov_sites(&self, a: &Site<T>, b: &Site<T>) -> T {
        self.cov(a.distance(b))
    }

    /// The same kernel rescaled to unit sill.
    pub fn normalized(&self) -> Self {
        let s = self.sill();
        Self {
            tau2: self.tau2 / s,
            sigma2: self.sigma2 / s,
            r: self.r,
        }
    }
}

pub fn kernel_value<T: Real>(d: T, params: &ExpKernelParams<T>) -> Result<T> {
    if !(d >= T::zero()) {
        return Err(Error::Input(format!("distance must be non-negative, got {d:?}")));
    }
    Ok(params.cov(d))
}

/// Covariance matrix over a site set, assembled row-parallel.
pub fn cov_matrix<T: Real>(sites: &SiteSet<T>, params: &ExpKernelParams<T>) -> Result<DMatrix<T>> {
    if sites.is_empty() {
        return Err(Error::Input("covariance matrix needs at least one site".into()));
    }
    let n = sites.len();
    let s = sites.as_slice();
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| params.cov(s[i].distance(&s[j]))).collect())
        .collect();
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Cross-covariance between two site sets (`a.len() × b.len()`).
pub fn cross_cov<T: Real>(
    a: &SiteSet<T>,
    b: &SiteSet<T>,
    params: &ExpKernelParams<T>,
) -> DMatrix<T> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| params.cov(a[i].distance(&b[j])))
}

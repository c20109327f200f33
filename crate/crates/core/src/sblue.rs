//! Regression S-BLUE (universal kriging with a linear mean) in exact and
//! rank-reduced form, and the Box-Cox transform used before it.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::SiteSet;
use crate::kernels::{cov_matrix, EigenBasis, ExpKernelParams};

pub const VIF_WARN: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct SblueModel {
    pub sites: SiteSet<f64>,
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
    pub z_hat: DVector<f64>,
    pub residuals: DVector<f64>,
    pub kernel: ExpKernelParams<f64>,
    /// Present in rank-reduced mode.
    pub basis: Option<EigenBasis>,
    pub std_errors: DVector<f64>,
    pub t_values: DVector<f64>,
    /// Variance inflation factor per column; NaN for constant columns.
    pub vif: Vec<f64>,
    /// `Ĉ⁻¹(Y − Xẑ)`, so a prediction costs one pass over the sites.
    weights: DVector<f64>,
}

/// Applies `Ĉ⁻¹` to the columns of a matrix.
enum Precision {
    Dense(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Reduced { vectors: DMatrix<f64>, inv_values: DVector<f64> },
}

impl Precision {
    fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Precision::Dense(ch) => ch.solve(m),
            Precision::Reduced { vectors, inv_values } => {
                let mut coords = vectors.tr_mul(m);
                for (mut row, &w) in coords.row_iter_mut().zip(inv_values.iter()) {
                    row *= w;
                }
                vectors * coords
            }
        }
    }
}

fn column_names(names: &[String], k: usize) -> Vec<String> {
    if names.len() == k {
        names.to_vec()
    } else {
        (1..=k).map(|i| format!("x{i}")).collect()
    }
}

/// VIF of each non-constant column against all the others.
fn variance_inflation(x: &DMatrix<f64>) -> Vec<f64> {
    let k = x.ncols();
    (0..k)
        .map(|c| {
            let col = x.column(c);
            let mean = col.mean();
            let sst: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
            if sst <= 1e-300 || k == 1 {
                return f64::NAN;
            }
            let others = x.clone().remove_column(c);
            let svd = others.clone().svd(true, true);
            let beta = match svd.solve(&col.into_owned(), 1e-12) {
                Ok(b) => b,
                Err(_) => return f64::NAN,
            };
            let sse = (col - &others * beta).norm_squared();
            let has_const = (0..others.ncols()).any(|j| {
                let o = others.column(j);
                o.iter().all(|v| (v - o[0]).abs() <= 1e-12 * o[0].abs().max(1.0))
            });
            // uncentred R² when the other columns cannot absorb the mean
            let tss = if has_const { sst } else { col.norm_squared() };
            let r2 = 1.0 - sse / tss;
            if r2 >= 1.0 { f64::INFINITY } else { 1.0 / (1.0 - r2) }
        })
        .collect()
}

/// Columns involved in an exact (numerical) linear dependence, if any.
fn collinear_columns(x: &DMatrix<f64>) -> Option<Vec<usize>> {
    let k = x.ncols();
    let mut scaled = x.clone();
    for mut c in scaled.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
    let svd = scaled.svd(false, true);
    let vt = svd.v_t.as_ref()?;
    let (imax, imin) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, 0), |(a, b), (i, &s)| {
            (
                if s > svd.singular_values[a] { i } else { a },
                if s < svd.singular_values[b] { i } else { b },
            )
        });
    let (smax, smin) = (svd.singular_values[imax], svd.singular_values[imin]);
    if smin > 1e-10 * smax {
        return None;
    }
    let v = vt.row(imin);
    Some((0..k).filter(|&j| v[j].abs() > 0.1).collect())
}

/// GLS fit of `Y = Xz + e`, `e ~ N(0, Ĉ)`. With a basis, `Ĉ⁻¹` is replaced by
/// `E_L Λ_L⁻¹ E_Lᵀ` (a pseudo-inverse for L < n).
pub fn gls_fit(
    sites: &SiteSet<f64>,
    x: &DMatrix<f64>,
    names: &[String],
    y: &[f64],
    kernel: &ExpKernelParams<f64>,
    basis: Option<&EigenBasis>,
) -> Result<SblueModel> {
    let n = sites.len();
    let k = x.ncols();
    if x.nrows() != n || y.len() != n {
        return Err(Error::Input(format!(
            "{n} sites, {} design rows and {} observations",
            x.nrows(),
            y.len()
        )));
    }
    if k == 0 || n <= k {
        return Err(Error::Input(format!("need n > K ≥ 1, got n = {n}, K = {k}")));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Input("design matrix or observations contain non-finite values".into()));
    }
    let names = column_names(names, k);
    if let Some(cols) = collinear_columns(x) {
        let list: Vec<&str> = cols.iter().map(|&c| names[c].as_str()).collect();
        return Err(Error::Fit(format!("design matrix is rank deficient: collinear columns {}", list.join(", "))));
    }
    let vif = variance_inflation(x);
    for (name, v) in names.iter().zip(&vif) {
        if *v > VIF_WARN {
            warn!("column {name} has variance inflation factor {v:.1}");
        }
    }

    let prec = match basis {
        None => Precision::Dense(
            cov_matrix(sites, kernel)?
                .cholesky()
                .ok_or_else(|| Error::Decomposition("covariance matrix is not positive definite".into()))?,
        ),
        Some(b) => {
            if b.n() != n {
                return Err(Error::Input(format!("basis has {} rows for {n} sites", b.n())));
            }
            if b.rank() < k {
                return Err(Error::Input(format!("basis rank {} is below the {k} regressors", b.rank())));
            }
            Precision::Reduced {
                vectors: b.vectors.clone(),
                inv_values: b.values.map(|v| 1.0 / v),
            }
        }
    };
    let yv = DVector::from_column_slice(y);
    let cx = prec.apply(x);
    let xtcx = x.tr_mul(&cx);
    let cov = xtcx
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Fit("XᵀĈ⁻¹X is singular (basis too small for the regressors?)".into()))?;
    let z_hat = &cov * cx.tr_mul(&yv);
    let residuals = &yv - x * &z_hat;
    let weights = prec.apply(&DMatrix::from_column_slice(n, 1, residuals.as_slice())).column(0).into_owned();
    let std_errors = DVector::from_iterator(k, (0..k).map(|i| cov[(i, i)].max(0.0).sqrt()));
    let t_values = z_hat.component_div(&std_errors);
    Ok(SblueModel {
        sites: sites.clone(),
        names,
        x: x.clone(),
        z_hat,
        residuals,
        kernel: *kernel,
        basis: basis.cloned(),
        std_errors,
        t_values,
        vif,
        weights,
    })
}

impl SblueModel {
    /// `X*ᵀẑ + ĉ(s*)ᵀĈ⁻¹(Y − Xẑ)`.
    pub fn predict(&self, at: (f64, f64), xstar: &[f64]) -> Result<f64> {
        if xstar.len() != self.z_hat.len() {
            return Err(Error::Input(format!(
                "prediction needs {} covariates, got {}",
                self.z_hat.len(),
                xstar.len()
            )));
        }
        let mean: f64 = xstar.iter().zip(self.z_hat.iter()).map(|(a, b)| a * b).sum();
        let krig: f64 = self
            .sites
            .iter()
            .zip(self.weights.iter())
            .map(|(s, w)| self.kernel.cov(s.distance_to(at.0, at.1)) * w)
            .sum();
        Ok(mean + krig)
    }

    /// Predictions at many points; `xstar` has one row per point.
    pub fn predict_many(&self, at: &[(f64, f64)], xstar: &DMatrix<f64>) -> Result<Vec<f64>> {
        if xstar.nrows() != at.len() {
            return Err(Error::Input(format!("{} points but {} covariate rows", at.len(), xstar.nrows())));
        }
        at.par_iter()
            .enumerate()
            .map(|(i, &p)| {
                let row: Vec<f64> = xstar.row(i).iter().copied().collect();
                self.predict(p, &row)
            })
            .collect()
    }
}

/// `(y^λ − 1)/λ`, or `ln y` at λ = 0.
pub fn boxcox(y: f64, lambda: f64) -> f64 {
    if lambda.abs() < 1e-12 {
        y.ln()
    } else {
        (y.powf(lambda) - 1.0) / lambda
    }
}

pub fn boxcox_inverse(v: f64, lambda: f64) -> f64 {
    if lambda.abs() < 1e-12 {
        v.exp()
    } else {
        (lambda * v + 1.0).powf(1.0 / lambda)
    }
}

fn boxcox_profile(y: &[f64], sum_log: f64, lambda: f64) -> f64 {
    let n = y.len() as f64;
    let t: Vec<f64> = y.iter().map(|&v| boxcox(v, lambda)).collect();
    let mean = t.iter().sum::<f64>() / n;
    let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) || !var.is_finite() {
        return f64::NEG_INFINITY;
    }
    -0.5 * n * var.ln() + (lambda - 1.0) * sum_log
}

/// λ ∈ [−2, 2] maximizing the Gaussian profile likelihood, found on a grid of
/// step 0.1 refined twice by a factor of ten around the best point.
pub fn boxcox_fit_transform(y: &[f64]) -> Result<(f64, Vec<f64>)> {
    if y.len() < 2 {
        return Err(Error::Input("Box-Cox needs at least two values".into()));
    }
    if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Input(format!("Box-Cox needs positive values; entry {i} is {v}")));
    }
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= 1e-12 * hi {
        return Err(Error::Fit("zero variance".into()));
    }
    let sum_log: f64 = y.iter().map(|v| v.ln()).sum();
    let mut best = 0.0;
    let mut best_ll = f64::NEG_INFINITY;
    let mut center = 0.0;
    let mut half: f64 = 2.0;
    let mut step: f64 = 0.1;
    for _ in 0..3 {
        let m = (half / step).round() as i64;
        for i in -m..=m {
            let l = (center + i as f64 * step).clamp(-2.0, 2.0);
            let ll = boxcox_profile(y, sum_log, l);
            if ll > best_ll {
                best_ll = ll;
                best = l;
            }
        }
        center = best;
        half = step;
        step /= 10.0;
    }
    // keep exact zero representable
    if best.abs() < 1e-9 {
        best = 0.0;
    }
    Ok((best, y.iter().map(|&v| boxcox(v, best)).collect()))
}

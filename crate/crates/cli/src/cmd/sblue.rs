use std::collections::HashMap;

use log::info;
use nalgebra::{DMatrix, DVector};
use tghrf::io::{read_covariate_csv, Table};
use tghrf::kernels::{cov_matrix, exact_eigs, nystrom_eigs, robust_variogram_wls, select_landmarks, EigenBasis};
use tghrf::rf::SpatialData;
use tghrf::sblue::{boxcox, boxcox_fit_transform, boxcox_inverse, gls_fit};
use tghrf::{Error, Result};

use super::f;
use crate::config::Provenance;
use crate::data::{key, load_days, spatial};
use crate::SblueArgs;

fn design(rows: &[&[f64]], intercept: bool) -> DMatrix<f64> {
    let k = rows.first().map_or(0, |r| r.len()) + intercept as usize;
    DMatrix::from_fn(rows.len(), k, |i, j| match (intercept, j) {
        (true, 0) => 1.0,
        (true, j) => rows[i][j - 1],
        (false, j) => rows[i][j],
    })
}

fn ols_residuals(x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let yv = DVector::from_column_slice(y);
    let z = x
        .clone()
        .svd(true, true)
        .solve(&yv, 1e-12)
        .map_err(|e| Error::Numeric { op: "ols".into(), msg: e.to_string() })?;
    Ok((yv - x * z).iter().copied().collect())
}

pub fn run(a: &SblueArgs, seed: u64, prov: &Provenance) -> Result<()> {
    let cov = read_covariate_csv(&a.covariates)?;
    let by_site: HashMap<_, usize> = cov.coords.iter().enumerate().map(|(i, &(x, y))| (key(x, y), i)).collect();
    let days = load_days(&a.obs, a.pool_adjacent_days, a.day)?;
    let mut names: Vec<String> = Vec::new();
    if !a.no_intercept {
        names.push("intercept".into());
    }
    names.extend(cov.names.iter().cloned());

    let mut data: Vec<(i64, SpatialData)> = Vec::new();
    for (&t, obs) in &days {
        data.push((t, spatial(obs)?));
    }

    // one λ for all days unless asked otherwise
    let global_lambda = if a.boxcox && !a.boxcox_per_day {
        let all: Vec<f64> = data.iter().flat_map(|(_, d)| d.values.iter().copied()).collect();
        let (l, _) = boxcox_fit_transform(&all)?;
        info!("Box-Cox lambda {l:.3}");
        Some(l)
    } else {
        None
    };

    let xstar = design(&cov.values.iter().map(|v| v.as_slice()).collect::<Vec<_>>(), !a.no_intercept);
    let mut pred = Table::new(&["t", "x", "y", "prediction"]);
    let mut coef = Table::new(&[
        "t", "name", "estimate", "std_error", "t_value", "vif", "lambda", "tau2", "sigma2", "r",
    ]);
    for (t, d) in &data {
        let rows = d
            .sites
            .iter()
            .map(|s| {
                by_site.get(&key(s.x, s.y)).map(|&i| cov.values[i].as_slice()).ok_or_else(|| {
                    Error::Input(format!("no covariates at ({}, {}) in {}", s.x, s.y, a.covariates.display()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let x = design(&rows, !a.no_intercept);
        let (lambda, y) = match (a.boxcox, global_lambda) {
            (false, _) => (f64::NAN, d.values.clone()),
            (true, Some(l)) => (l, d.values.iter().map(|&v| boxcox(v, l)).collect()),
            (true, None) => boxcox_fit_transform(&d.values)?,
        };
        let resid = ols_residuals(&x, &y)?;
        let kernel = robust_variogram_wls(&d.sites, &resid)?.params;
        let basis: Option<EigenBasis> = match a.rank {
            None => None,
            Some(l) => Some(match a.nystrom {
                None => exact_eigs(&cov_matrix(&d.sites, &kernel)?, l)?,
                Some(factor) => {
                    let ids = select_landmarks(d.len(), (factor * l).min(d.len()), seed)?;
                    nystrom_eigs(&d.sites, &kernel, &ids, l)?
                }
            }),
        };
        let model = gls_fit(&d.sites, &x, &names, &y, &kernel, basis.as_ref())?;
        let p = model.predict_many(&cov.coords, &xstar)?;
        for (&(px, py), v) in cov.coords.iter().zip(p) {
            let v = if a.boxcox { boxcox_inverse(v, lambda) } else { v };
            pred.push(vec![t.to_string(), f(px), f(py), f(v)]);
        }
        for (j, name) in model.names.iter().enumerate() {
            coef.push(vec![
                t.to_string(),
                name.clone(),
                f(model.z_hat[j]),
                f(model.std_errors[j]),
                f(model.t_values[j]),
                f(model.vif[j]),
                f(lambda),
                f(kernel.tau2),
                f(kernel.sigma2),
                f(kernel.r),
            ]);
        }
    }
    prov.write(&a.out, &pred)?;
    prov.write(&a.out_coef, &coef)
}

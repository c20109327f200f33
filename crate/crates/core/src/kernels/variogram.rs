use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::ExpKernelParams;
use crate::error::{Error, Result};
use crate::field::SiteSet;
use crate::optim::{nelder_mead, Bounds, NelderMeadOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariogramOptions {
    pub n_bins: usize,
    /// Bins cover `(0, max_lag_fraction × max distance]`.
    pub max_lag_fraction: f64,
}

impl Default for VariogramOptions {
    fn default() -> Self {
        Self {
            n_bins: 15,
            max_lag_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariogramBin {
    /// Mean pair distance in the bin.
    pub lag: f64,
    /// Cressie–Hawkins robust semivariance.
    pub gamma: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariogramFit {
    pub params: ExpKernelParams<f64>,
    pub bins: Vec<VariogramBin>,
    pub objective: f64,
    pub initial_objective: f64,
}

/// Exponential semivariogram `σ² + τ²(1 − exp(−h/r))`, for `h > 0`.
pub fn semivariance(h: f64, p: &ExpKernelParams<f64>) -> f64 {
    p.sigma2 + p.tau2 * (-(-h / p.r).exp_m1())
}

fn empirical_bins(sites: &SiteSet<f64>, z: &[f64], opts: &VariogramOptions) -> (Vec<VariogramBin>, f64) {
    let n = sites.len();
    let s = sites.as_slice();
    let maxd = sites.max_distance();
    let cutoff = opts.max_lag_fraction * maxd;
    let width = cutoff / opts.n_bins as f64;
    let mut cnt = vec![0usize; opts.n_bins];
    let mut root = vec![0.0f64; opts.n_bins];
    let mut dist = vec![0.0f64; opts.n_bins];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = s[i].distance(&s[j]);
            if d <= 0.0 || d > cutoff {
                continue;
            }
            let b = ((d / width) as usize).min(opts.n_bins - 1);
            cnt[b] += 1;
            root[b] += (z[i] - z[j]).abs().sqrt();
            dist[b] += d;
        }
    }
    let bins = (0..opts.n_bins)
        .filter(|&b| cnt[b] > 0)
        .map(|b| {
            let nh = cnt[b] as f64;
            let m = root[b] / nh;
            VariogramBin {
                lag: dist[b] / nh,
                gamma: m.powi(4) / (2.0 * (0.457 + 0.494 / nh)),
                count: cnt[b],
            }
        })
        .collect();
    (bins, maxd)
}

fn wls_objective(bins: &[VariogramBin], p: &ExpKernelParams<f64>) -> f64 {
    bins.iter()
        .map(|b| {
            let r = b.gamma / semivariance(b.lag, p) - 1.0;
            b.count as f64 * r * r
        })
        .sum()
}

pub fn robust_variogram_wls(sites: &SiteSet<f64>, residuals: &[f64]) -> Result<VariogramFit> {
    robust_variogram_wls_with(sites, residuals, &VariogramOptions::default())
}

/// Robust empirical variogram followed by a weighted least-squares fit of the
/// exponential model on log-parameters.
pub fn robust_variogram_wls_with(
    sites: &SiteSet<f64>,
    residuals: &[f64],
    opts: &VariogramOptions,
) -> Result<VariogramFit> {
    let n = sites.len();
    if residuals.len() != n {
        return Err(Error::Input(format!("{} residuals for {n} sites", residuals.len())));
    }
    if n * n.saturating_sub(1) / 2 < 30 {
        return Err(Error::Input(format!("variogram needs at least 30 pairs, have {n} sites")));
    }
    if opts.n_bins == 0 || !(opts.max_lag_fraction > 0.0) {
        return Err(Error::Input("invalid variogram binning options".into()));
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite residual".into()));
    }
    let lo = residuals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    if hi - lo <= 1e-12 * scale {
        return Err(Error::Fit("zero variance".into()));
    }
    let (bins, maxd) = empirical_bins(sites, residuals, opts);
    if bins.len() < 3 || bins.iter().all(|b| b.gamma <= 0.0) {
        return Err(Error::Fit("zero variance".into()));
    }

    let gmax = bins.iter().map(|b| b.gamma).fold(0.0, f64::max);
    let tail = &bins[bins.len() - bins.len().div_ceil(3)..];
    let sill = (tail.iter().map(|b| b.gamma).sum::<f64>() / tail.len() as f64).max(1e-8);
    let first = bins[0].gamma;
    let var_floor = 1e-8f64;
    let r_lo = 1e-3f64;
    let r_hi = (10.0 * maxd).max(r_lo * 10.0);
    let vhi = (1e3 * gmax).max(1.0).ln();
    let bounds = [
        Bounds::new(var_floor.ln(), vhi),
        Bounds::new(var_floor.ln(), vhi),
        Bounds::new(r_lo.ln(), r_hi.ln()),
    ];
    let clamp = |x: [f64; 3]| -> Vec<f64> { x.iter().zip(&bounds).map(|(v, b)| b.clamp(*v)).collect() };
    let to_params = |x: &[f64]| ExpKernelParams {
        tau2: x[0].exp(),
        sigma2: x[1].exp(),
        r: x[2].exp(),
    };
    let f = |x: &[f64]| wls_objective(&bins, &to_params(x));

    let nug0 = (0.5 * first.min(sill)).max(var_floor);
    let tau0 = (sill - nug0).max(0.1 * sill).max(var_floor);
    let cutoff = opts.max_lag_fraction * maxd;
    let x0 = clamp([tau0.ln(), nug0.ln(), (cutoff / 3.0).ln()]);
    let initial_objective = f(&x0);

    let nm = NelderMeadOptions::default();
    let mut best = nelder_mead(f, &x0, &[0.5, 0.5, 0.5], &bounds, &nm);
    for &(share, rfrac) in &[(0.1, 0.1), (0.9, 0.1), (0.1, 1.0), (0.5, 2.0)] {
        let start = clamp([
            ((1.0 - share) * sill).max(var_floor).ln(),
            (share * sill).max(var_floor).ln(),
            (rfrac * cutoff).ln(),
        ]);
        let m = nelder_mead(f, &start, &[0.5, 0.5, 0.5], &bounds, &nm);
        if m.f < best.f {
            best = m;
        }
    }
    let mut params = to_params(&best.x);
    let mut objective = best.f;


    // Pure nugget is nested in the exponential model; keep the spatial part
    // only if it beats a flat variogram by an F test at the 1% level. Without
    // this, iid residuals fit a long-range ramp or a sub-lag range with an
    // arbitrary split between τ² and σ².
    let (sw, sw2) = bins.iter().fold((0.0, 0.0), |(a, b), bin| {
        (a + bin.count as f64 * bin.gamma, b + bin.count as f64 * bin.gamma * bin.gamma)
    });
    let flat = ExpKernelParams {
        tau2: var_floor,
        sigma2: (sw2 / sw - var_floor).max(var_floor),
        r: params.r,
    };
    let flat_obj = wls_objective(&bins, &flat);
    let dof = bins.len() as f64 - 3.0;
    let keep_spatial = if dof >= 1.0 && objective > 0.0 {
        let f_stat = ((flat_obj - objective) / 2.0) / (objective / dof);
        let crit = FisherSnedecor::new(2.0, dof)
            .map(|d| d.inverse_cdf(0.99))
            .unwrap_or(f64::INFINITY);
        f_stat > crit
    } else {
        flat_obj > objective
    };
    if !keep_spatial && flat_obj <= initial_objective {
        params = flat;
        objective = flat_obj;
    }
    Ok(VariogramFit {
        params,
        bins,
        objective,
        initial_objective,
    })
}

//! Exact TGH random-field likelihood and its alternating maximization.
//!
//! Dependence is fitted as a unit-sill correlation: the nugget share `ν` and
//! the range `r` give τ² = 1 − ν and σ² = ν, with the overall scale carried
//! by `b`. A free sill would be confounded with `b`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::field::pairwise_distances;
use crate::kernels::{cov_matrix, robust_variogram_wls, ExpKernelParams};
use crate::optim::{nelder_mead, newton_box, Bounds, Minimum, NelderMeadOptions};
use crate::rf::{
    assemble, initial_theta1, latent, theta1_block, theta1_intervals, Intervals, SpatialData,
    Theta1Frame, G_BOUND, H_BOUND,
};
use crate::tgh::TghParams;

#[derive(Debug, Clone, PartialEq)]
pub struct TghRfModel {
    pub params: TghParams<f64>,
    pub kernel: ExpKernelParams<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood after each outer iteration, starting with the initial value.
    pub history: Vec<f64>,
    pub intervals: Intervals,
}

#[derive(Debug, Clone)]
pub struct FullFitOptions {
    pub max_iter: usize,
    /// Stop when an outer iteration gains less than this.
    pub tol: f64,
    /// Keep g = h at their initial values (Gaussian kriging when both are 0).
    pub freeze_gh: bool,
    /// Joint simplex over all parameters after the alternating phase;
    /// `None` enables it for n ≤ 200.
    pub joint_polish: Option<bool>,
    pub intervals: bool,
}

impl Default for FullFitOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-6,
            freeze_gh: false,
            joint_polish: None,
            intervals: true,
        }
    }
}

pub(crate) fn cholesky_parts(c: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let chol = c
        .cholesky()
        .ok_or_else(|| Error::Decomposition("covariance matrix is not positive definite".into()))?;
    let l = chol.unpack();
    let logdet = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok((l, logdet))
}

/// Gaussian part with a fixed Cholesky factor.
pub(crate) struct DenseGauss {
    pub l: DMatrix<f64>,
    pub logdet: f64,
}

impl DenseGauss {
    pub fn eval(&self, z: &DVector<f64>) -> f64 {
        let w = self
            .l
            .solve_lower_triangular(z)
            .expect("factor has a positive diagonal");
        assemble(w.norm_squared(), self.logdet, z.len(), 0.0)
    }
}

/// Exact log-likelihood
/// `−½ZᵀC⁻¹Z − ½ln|C| − (n/2)ln 2π − n ln b − Σ ln τ'(Zᵢ)`, `Zᵢ = τ⁻¹((yᵢ − a)/b)`.
pub fn tgh_rf_loglik(
    params: &TghParams<f64>,
    kernel: &ExpKernelParams<f64>,
    data: &SpatialData,
) -> Result<f64> {
    let lat = latent(params, data, "tgh_rf_loglik")?;
    let (l, logdet) = cholesky_parts(cov_matrix(&data.sites, kernel)?)?;
    let g = DenseGauss { l, logdet };
    Ok(g.eval(&lat.z) - lat.ln_jac)
}

/// Unit-sill correlation from pairwise distances.
pub(crate) fn correlation(dist: &DMatrix<f64>, r: f64, nugget: f64) -> DMatrix<f64> {
    let n = dist.nrows();
    let tau2 = 1.0 - nugget;
    DMatrix::from_fn(n, n, |i, j| {
        let d = dist[(i, j)];
        if i == j || d <= 0.0 {
            1.0
        } else {
            tau2 * (-d / r).exp()
        }
    })
}

const NUGGET_MAX: f64 = 0.95;

struct Theta2Space {
    ln_r: Bounds,
}

impl Theta2Space {
    fn new(maxd: f64) -> Self {
        Self {
            ln_r: Bounds::new((1e-3 * maxd).ln(), (10.0 * maxd).ln()),
        }
    }

    fn bounds(&self) -> [Bounds; 2] {
        [self.ln_r, Bounds::new(0.0, NUGGET_MAX)]
    }

    fn kernel(x: &[f64]) -> ExpKernelParams<f64> {
        ExpKernelParams {
            tau2: 1.0 - x[1],
            sigma2: x[1],
            r: x[0].exp(),
        }
    }
}

fn initial_theta2(data: &SpatialData, p: &TghParams<f64>, maxd: f64) -> [f64; 2] {
    let fallback = [(maxd / 5.0).ln(), 0.1];
    let Ok(lat) = latent(p, data, "initial_theta2") else {
        return fallback;
    };
    match robust_variogram_wls(&data.sites, lat.z.as_slice()) {
        Ok(v) => {
            let nug = (v.params.sigma2 / v.params.sill()).clamp(0.0, 0.9);
            let space = Theta2Space::new(maxd);
            [space.ln_r.clamp(v.params.r.ln()), nug]
        }
        Err(_) => fallback,
    }
}

/// Alternating maximization: θ₁ = (a, b, g, h) with the correlation fixed,
/// then θ₂ = (r, ν) with θ₁ fixed, until an outer iteration gains less than
/// `tol`.
pub fn fit_full(
    data: &SpatialData,
    init: Option<&TghRfModel>,
    opts: &FullFitOptions,
) -> Result<TghRfModel> {
    let n = data.len();
    if n < 20 {
        return Err(Error::Input(format!("full fit needs at least 20 sites, got {n}")));
    }
    let dist = pairwise_distances(&data.sites)?;
    let maxd = dist.max();
    let space = Theta2Space::new(maxd);

    let (mut p, mut x2) = match init {
        Some(m) => {
            let mut p = m.params;
            if opts.freeze_gh {
                p.g = 0.0;
                p.h = 0.0;
            }
            let nug = (m.kernel.sigma2 / m.kernel.sill()).clamp(0.0, NUGGET_MAX);
            (p, [space.ln_r.clamp(m.kernel.r.ln()), nug])
        }
        None => {
            let p = initial_theta1(data, opts.freeze_gh)?;
            let x2 = initial_theta2(data, &p, maxd);
            (p, x2)
        }
    };
    let frame = Theta1Frame { a0: p.a, b0: p.b };

    let gauss_at = |x2: &[f64]| -> Result<DenseGauss> {
        let (l, logdet) = cholesky_parts(correlation(&dist, x2[0].exp(), x2[1]))?;
        Ok(DenseGauss { l, logdet })
    };
    let full_ll = |p: &TghParams<f64>, x2: &[f64]| -> f64 {
        let Ok(lat) = latent(p, data, "fit_full") else {
            return f64::NEG_INFINITY;
        };
        match gauss_at(x2) {
            Ok(g) => g.eval(&lat.z) - lat.ln_jac,
            Err(_) => f64::NEG_INFINITY,
        }
    };

    let mut ll = full_ll(&p, &x2);
    if !ll.is_finite() {
        return Err(Error::numeric("fit_full", "log-likelihood at the starting point is not finite"));
    }
    let mut history = vec![ll];
    let inner = NelderMeadOptions {
        f_tol: 1e-10,
        x_tol: 1e-8,
        ..Default::default()
    };
    // each θ₂ evaluation is a Cholesky factorization: a coarse simplex on
    // the first pass, then Newton steps from the previous optimum
    let theta2_opts = NelderMeadOptions {
        f_tol: 1e-6,
        x_tol: 1e-3,
        restarts: 0,
        ..Default::default()
    };
    let mut converged = false;
    let mut iterations = 0;
    let mut prev_joint: Option<[f64; 6]> = None;
    let sb = space.bounds();
    let joint_bounds = [
        Bounds::free(),
        Bounds::new(-20.0, 20.0),
        Bounds::new(-G_BOUND, G_BOUND),
        Bounds::new(0.0, H_BOUND),
        sb[0],
        sb[1],
    ];
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let g = gauss_at(&x2)?;
        let (p1, _) = theta1_block(data, &frame, &p, opts.freeze_gh, &inner, |z| g.eval(z));
        p = p1;
        let lat = latent(&p, data, "fit_full")?;
        let theta2_obj = |x: &[f64]| match gauss_at(x) {
            Ok(g) => -(g.eval(&lat.z)),
            Err(_) => f64::INFINITY,
        };
        let mut m = if it == 0 {
            nelder_mead(theta2_obj, &x2, &[0.3, 0.05], &space.bounds(), &theta2_opts)
        } else {
            let f0 = theta2_obj(&x2);
            Minimum { x: x2.to_vec(), f: f0, evals: 1, converged: false }
        };
        let nm = newton_box(theta2_obj, &m.x, &[1e-4, 1e-5], &space.bounds(), 1e-10, 20);
        if nm.f <= m.f {
            m = nm;
        }
        x2 = [m.x[0], m.x[1]];
        let mut new = -m.f - lat.ln_jac;

        // Block ascent creeps along ridges between the blocks; step further
        // along the last joint move while that keeps improving.
        let x1 = frame.to_x(&p);
        let cur = [x1[0], x1[1], x1[2], x1[3], x2[0], x2[1]];
        if let Some(prev) = prev_joint {
            let mut alpha = 1.0;
            for _ in 0..6 {
                let mut cand = [0.0; 6];
                for k in 0..6 {
                    cand[k] = joint_bounds[k].clamp(cur[k] + alpha * (cur[k] - prev[k]));
                }
                let q = frame.from_x(&cand[..4], None);
                let v = full_ll(&q, &cand[4..]);
                if v > new {
                    new = v;
                    p = q;
                    x2 = [cand[4], cand[5]];
                    alpha *= 2.0;
                } else {
                    break;
                }
            }
        }
        let x1 = frame.to_x(&p);
        prev_joint = Some([x1[0], x1[1], x1[2], x1[3], x2[0], x2[1]]);
        if new < ll - 1e-9 * ll.abs().max(1.0) {
            return Err(Error::Optimizer(format!(
                "log-likelihood decreased from {ll} to {new} at outer iteration {iterations}"
            )));
        }
        let gain = new - ll;
        ll = new;
        history.push(ll);
        if gain < opts.tol {
            converged = true;
            break;
        }
    }

    if opts.joint_polish.unwrap_or(n <= 200) {
        let dim1 = if opts.freeze_gh { 2 } else { 4 };
        let freeze = opts.freeze_gh.then_some((p.g, p.h));
        let x1 = frame.to_x(&p);
        let mut x0: Vec<f64> = x1[..dim1].to_vec();
        x0.extend_from_slice(&x2);
        let mut bounds = vec![
            Bounds::free(),
            Bounds::new(-20.0, 20.0),
            Bounds::new(-G_BOUND, G_BOUND),
            Bounds::new(0.0, H_BOUND),
        ];
        bounds.truncate(dim1);
        bounds.extend_from_slice(&space.bounds());
        let mut step = vec![0.01, 0.01, 0.01, 0.01];
        step.truncate(dim1);
        step.extend_from_slice(&[0.02, 0.01]);
        let m = nelder_mead(
            |x| -full_ll(&frame.from_x(&x[..dim1], freeze), &x[dim1..]),
            &x0,
            &step,
            &bounds,
            &NelderMeadOptions {
                max_evals: 6000,
                f_tol: 1e-13,
                x_tol: 1e-10,
                restarts: 3,
            },
        );
        if -m.f > ll {
            p = frame.from_x(&m.x[..dim1], freeze);
            x2 = [m.x[dim1], m.x[dim1 + 1]];
            ll = -m.f;
            history.push(ll);
        }
    }

    let intervals = if opts.intervals && !opts.freeze_gh {
        let g = gauss_at(&x2)?;
        theta1_intervals(data, &p, |z| g.eval(z))
    } else {
        Intervals::unavailable()
    };
    Ok(TghRfModel {
        params: p,
        kernel: Theta2Space::kernel(&x2),
        loglik: ll,
        iterations,
        converged,
        history,
        intervals,
    })
}

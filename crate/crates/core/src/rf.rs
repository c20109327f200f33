//! Pieces shared by the TGH random-field likelihoods: the latent transform,
//! the θ₁ = (a, b, g, h) block and initial values.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::field::SiteSet;
use crate::lmoments::lmoment_match;
use crate::optim::{nelder_mead, numeric_hessian, Bounds, NelderMeadOptions};
use crate::special::LN_SQRT_2PI;
use crate::tgh::{ln_tau_gh_deriv, tau_gh, tau_gh_inv, TghParams};

/// Observed values at a set of sites.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialData {
    pub sites: SiteSet<f64>,
    pub values: Vec<f64>,
}

impl SpatialData {
    pub fn new(sites: SiteSet<f64>, values: Vec<f64>) -> Result<Self> {
        if sites.len() != values.len() {
            return Err(Error::Input(format!(
                "{} sites but {} values",
                sites.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("value at site {} is not finite", sites[i].id)));
        }
        Ok(Self { sites, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Latent Gaussian scores `Z = τ⁻¹((y − a)/b)` and the log-Jacobian
/// `n ln b + Σ ln τ'(Z)`.
#[derive(Debug, Clone)]
pub struct Latent {
    pub z: DVector<f64>,
    pub ln_jac: f64,
}

pub fn latent(params: &TghParams<f64>, data: &SpatialData, op: &'static str) -> Result<Latent> {
    params.require_monotone()?;
    let n = data.len();
    let mut z = DVector::zeros(n);
    let mut ln_jac = n as f64 * params.b.ln();
    for (i, &y) in data.values.iter().enumerate() {
        let zi = tau_gh_inv((y - params.a) / params.b, params.g, params.h).map_err(|e| {
            Error::numeric(op, format!("inverse transform failed at site {}: {e}", data.sites[i].id))
        })?;
        z[i] = zi;
        ln_jac += ln_tau_gh_deriv(zi, params.g, params.h);
    }
    Ok(Latent { z, ln_jac })
}

/// `−½ quad − ½ logdet − (n/2) ln 2π − ln_jac`.
#[inline]
pub(crate) fn assemble(quad: f64, logdet: f64, n: usize, ln_jac: f64) -> f64 {
    -0.5 * quad - 0.5 * logdet - n as f64 * LN_SQRT_2PI - ln_jac
}

/// Approximate 95% intervals for (a, b, g, h).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intervals {
    pub low: [f64; 4],
    pub high: [f64; 4],
}

impl Intervals {
    pub fn unavailable() -> Self {
        Self {
            low: [f64::NAN; 4],
            high: [f64::NAN; 4],
        }
    }
}

pub(crate) const G_BOUND: f64 = 2.0;
pub(crate) const H_BOUND: f64 = 0.9;

/// Coordinates `((a − a₀)/b₀, ln(b/b₀), g, h)` relative to a reference
/// location and scale, so the θ₁ search is equivariant under affine maps of
/// the data.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Theta1Frame {
    pub a0: f64,
    pub b0: f64,
}

impl Theta1Frame {
    pub fn to_x(&self, p: &TghParams<f64>) -> [f64; 4] {
        [(p.a - self.a0) / self.b0, (p.b / self.b0).ln(), p.g, p.h]
    }

    pub fn from_x(&self, x: &[f64], freeze: Option<(f64, f64)>) -> TghParams<f64> {
        let (g, h) = freeze.unwrap_or_else(|| (x[2], x[3]));
        TghParams {
            a: self.a0 + self.b0 * x[0],
            b: self.b0 * x[1].exp(),
            g,
            h,
        }
    }
}

/// Maximizes `gauss(Z) − ln_jac` over θ₁ where `gauss` returns the Gaussian
/// part `−½ quad − ½ logdet − (n/2) ln 2π`. With `freeze_gh` the pair (g, h)
/// stays at its starting value.
pub(crate) fn theta1_block<F>(
    data: &SpatialData,
    frame: &Theta1Frame,
    start: &TghParams<f64>,
    freeze_gh: bool,
    opts: &NelderMeadOptions,
    mut gauss: F,
) -> (TghParams<f64>, f64)
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let freeze = freeze_gh.then_some((start.g, start.h));
    let x0 = frame.to_x(start);
    let dim = if freeze_gh { 2 } else { 4 };
    let bounds = [
        Bounds::free(),
        Bounds::new(-20.0, 20.0),
        Bounds::new(-G_BOUND, G_BOUND),
        Bounds::new(0.0, H_BOUND),
    ];
    let obj = |x: &[f64]| -> f64 {
        let p = frame.from_x(x, freeze);
        match latent(&p, data, "theta1") {
            Ok(l) => -(gauss(&l.z) - l.ln_jac),
            Err(_) => f64::INFINITY,
        }
    };
    let step = [0.1, 0.1, 0.05, 0.05];
    let m = nelder_mead(obj, &x0[..dim], &step[..dim], &bounds[..dim], opts);
    (frame.from_x(&m.x, freeze), -m.f)
}

/// Wald intervals from a central-difference Hessian of the θ₁ log-likelihood
/// with the dependence parameters held at their estimates.
pub(crate) fn theta1_intervals<F>(data: &SpatialData, p: &TghParams<f64>, mut gauss: F) -> Intervals
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let hs = 1e-4;
    // keep the h stencil inside h ≥ 0
    let center = [p.a, p.b, p.g, p.h.max(1.5 * hs)];
    let steps = [hs * p.b, hs * p.b, hs, hs];
    let mut negll = |x: &[f64]| -> f64 {
        let q = TghParams { a: x[0], b: x[1], g: x[2], h: x[3] };
        if !(q.b > 0.0) {
            return f64::NAN;
        }
        match latent(&q, data, "theta1") {
            Ok(l) => -(gauss(&l.z) - l.ln_jac),
            Err(_) => f64::NAN,
        }
    };
    let hess = numeric_hessian(&mut negll, &center, &steps);
    let Some(cov) = hess.clone().try_inverse() else {
        return Intervals::unavailable();
    };
    let est = [p.a, p.b, p.g, p.h];
    let mut out = Intervals::unavailable();
    for k in 0..4 {
        let v = cov[(k, k)];
        if v.is_finite() && v > 0.0 {
            let se = v.sqrt();
            out.low[k] = est[k] - 1.96 * se;
            out.high[k] = est[k] + 1.96 * se;
        }
    }
    if out.low[1].is_finite() {
        out.low[1] = out.low[1].max(0.0);
    }
    if out.low[3].is_finite() {
        out.low[3] = out.low[3].max(0.0);
    }
    out
}

pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    let w = pos - i as f64;
    sorted[i] * (1.0 - w) + sorted[j] * w
}

/// Starting θ₁: (g, h) from l-moment matching; `a` the sample median and `b`
/// matching the interquartile range under those (g, h). `g` is shrunk until
/// every observation is in the range of the transform.
pub fn initial_theta1(data: &SpatialData, freeze_gh: bool) -> Result<TghParams<f64>> {
    let mut s = data.values.clone();
    s.sort_by(|a, b| a.total_cmp(b));
    if s[s.len() - 1] - s[0] <= 1e-12 * s[0].abs().max(s[s.len() - 1].abs()) {
        return Err(Error::Fit("zero variance".into()));
    }
    let (mut g, mut h) = (0.0, 0.0);
    if !freeze_gh {
        if let Ok(fit) = lmoment_match(&data.values) {
            g = fit.params.g.clamp(-G_BOUND, G_BOUND);
            h = fit.params.h.clamp(0.0, H_BOUND);
        }
    }
    let a = quantile(&s, 0.5);
    let iqr = quantile(&s, 0.75) - quantile(&s, 0.25);
    let q = 0.674_489_750_196_081_7;
    for _ in 0..60 {
        let spread = tau_gh(q, g, h) - tau_gh(-q, g, h);
        let b = if iqr > 0.0 {
            iqr / spread
        } else {
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s.len() as f64).sqrt()
        };
        let p = TghParams::new(a, b, g, h)?;
        if latent(&p, data, "initial_theta1").is_ok() {
            return Ok(p);
        }
        g *= 0.5;
        if g.abs() < 1e-6 {
            g = 0.0;
        }
    }
    Err(Error::Fit("no starting g-and-h parameters cover the data".into()))
}

//! The Tukey g-and-h family.
//!
//! A variable `Y = a + b·τ(Z)` with `Z ~ N(0, 1)` and
//!
//! ```text
//! τ(z) = (exp(g z) − 1) / g · exp(h z² / 2)      (z · exp(h z² / 2) when g = 0)
//! ```
//!
//! `g` drives skewness and `h ≥ 0` tail weight. `a` and `b` are a location and
//! a scale, not the mean and standard deviation once `g` or `h` is non-zero.

use crate::error::{Error, Result};
use crate::quad;
use crate::scalar::{lit, to_f64, Real};
use crate::special::{norm_cdf, norm_ln_pdf, norm_ppf, LN_SQRT_2PI};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TghParams<T> {
    pub a: T,
    pub b: T,
    pub g: T,
    pub h: T,
}

impl<T: Real> TghParams<T> {
    pub fn new(a: T, b: T, g: T, h: T) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && g.is_finite() && h.is_finite()) {
            return Err(Error::Input("g-and-h parameters must be finite".into()));
        }
        if b <= T::zero() {
            return Err(Error::Input(format!("scale b must be positive, got {b:?}")));
        }
        Ok(Self { a, b, g, h })
    }

    pub fn gaussian(a: T, b: T) -> Result<Self> {
        Self::new(a, b, T::zero(), T::zero())
    }

    /// `false` when `h < 0`: the transform then folds back on part of the line
    /// and densities are undefined.
    pub fn is_monotone(&self) -> bool {
        self.h >= T::zero()
    }

    pub(crate) fn require_monotone(&self) -> Result<()> {
        if self.is_monotone() {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "h = {:?} < 0 gives a non-monotone transform",
                self.h
            )))
        }
    }

    pub fn cast<U: Real>(&self) -> TghParams<U> {
        TghParams {
            a: lit(to_f64(self.a)),
            b: lit(to_f64(self.b)),
            g: lit(to_f64(self.g)),
            h: lit(to_f64(self.h)),
        }
    }
}

/// `(exp(g z) − 1) / g`, continuous through `g = 0`.
#[inline]
fn skew_part<T: Real>(z: T, g: T) -> T {
    if g == T::zero() {
        z
    } else {
        (g * z).exp_m1() / g
    }
}

/// The g-and-h transform τ. Accepts any `h`; see [`TghParams::is_monotone`].
#[inline]
pub fn tau_gh<T: Real>(z: T, g: T, h: T) -> T {
    skew_part(z, g) * (h * z * z * lit(0.5)).exp()
}

/// τ'(z) = exp(h z²/2) · [exp(g z) + h z (exp(g z) − 1)/g].
#[inline]
pub fn tau_gh_deriv<T: Real>(z: T, g: T, h: T) -> T {
    let half = lit::<T>(0.5);
    (h * z * z * half).exp() * ((g * z).exp() + h * z * skew_part(z, g))
}

/// ln τ'(z), evaluated without forming the exponential tail factor.
#[inline]
pub fn ln_tau_gh_deriv<T: Real>(z: T, g: T, h: T) -> T {
    let half = lit::<T>(0.5);
    h * z * z * half + ((g * z).exp() + h * z * skew_part(z, g)).ln()
}

const INV_BRACKET: f64 = 40.0;
const INV_MAX_ITER: usize = 200;

/// Inverse transform on the monotone branch (`h ≥ 0`).
///
/// Safeguarded Newton: the iterate stays inside a shrinking sign bracket that
/// starts at `[−40, 40]` and falls back to bisection whenever the Newton step
/// leaves it.
pub fn tau_gh_inv<T: Real>(y: T, g: T, h: T) -> Result<T> {
    if h < T::zero() {
        return Err(Error::Domain(format!(
            "inverse transform needs h >= 0, got {h:?}"
        )));
    }
    if !y.is_finite() {
        return Err(Error::numeric("tau_gh_inv", format!("non-finite input {y:?}")));
    }
    if y == T::zero() {
        return Ok(T::zero());
    }
    let mut lo = -lit::<T>(INV_BRACKET);
    let mut hi = lit::<T>(INV_BRACKET);
    if !(tau_gh(lo, g, h) <= y && y <= tau_gh(hi, g, h)) {
        return Err(Error::numeric(
            "tau_gh_inv",
            format!("value {y:?} outside the range of the transform for g={g:?}, h={h:?}"),
        ));
    }

    let eps = T::epsilon();
    let ay = y.abs();
    let floor = lit::<T>(1e-8);
    let guess = (lit::<T>(2.0) * ay.ln_1p() / h.max(floor)).sqrt();
    let mut z = ay.min(guess).copysign(y);
    if g != T::zero() {
        // for strong skew the Gaussian-tail guess can start far outside; the
        // log of the skew part is a better first guess
        let gz = (T::one() + g * y).max(lit(1e-300)).ln() / g;
        if gz.is_finite() && gz.abs() < z.abs() {
            z = gz;
        }
    }
    z = z.max(lo).min(hi);

    let f_tol = lit::<T>(16.0) * eps * ay.max(T::one());
    for _ in 0..INV_MAX_ITER {
        let f = tau_gh(z, g, h) - y;
        if f.abs() <= f_tol {
            return Ok(z);
        }
        if f < T::zero() {
            lo = z;
        } else {
            hi = z;
        }
        let d = tau_gh_deriv(z, g, h);
        let mut next = z - f / d;
        if !next.is_finite() || next <= lo || next >= hi {
            next = lit::<T>(0.5) * (lo + hi);
        }
        if (next - z).abs() <= lit::<T>(4.0) * eps * z.abs().max(T::one()) {
            return Ok(next);
        }
        z = next;
    }
    Err(Error::numeric(
        "tau_gh_inv",
        format!("no convergence after {INV_MAX_ITER} iterations for y={y:?}, g={g:?}, h={h:?}"),
    ))
}

/// Quantile function `a + b·τ(Φ⁻¹(u))` for `u` in (0, 1).
pub fn tgh_quantile<T: Real>(u: T, params: &TghParams<T>) -> Result<T> {
    if !(u > T::zero() && u < T::one()) {
        return Err(Error::Input(format!("probability must lie in (0, 1), got {u:?}")));
    }
    let z: T = lit(norm_ppf(to_f64(u)));
    Ok(params.a + params.b * tau_gh(z, params.g, params.h))
}

/// Log-density `ln φ(z) − ln b − ln τ'(z)` with `z = τ⁻¹((y − a)/b)`.
pub fn tgh_log_pdf<T: Real>(y: T, params: &TghParams<T>) -> Result<T> {
    params.require_monotone()?;
    let z = tau_gh_inv((y - params.a) / params.b, params.g, params.h)?;
    let lz: T = lit(norm_ln_pdf(to_f64(z)));
    Ok(lz - params.b.ln() - ln_tau_gh_deriv(z, params.g, params.h))
}

/// Distribution function `Φ(τ⁻¹((y − a)/b))`.
pub fn tgh_cdf<T: Real>(y: T, params: &TghParams<T>) -> Result<T> {
    params.require_monotone()?;
    let z = tau_gh_inv((y - params.a) / params.b, params.g, params.h)?;
    Ok(lit(norm_cdf(to_f64(z))))
}

/// First two l-moments and the l-moment ratios of the standard member (a = 0, b = 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationLMoments {
    pub l1: f64,
    pub l2: f64,
    pub tau3: f64,
    pub tau4: f64,
}

/// Population l-moments of `τ(Z)`.
///
/// Each `l_m = ∫₀¹ F⁻¹(u) P*_{m−1}(u) du` is evaluated after the substitution
/// `u = Φ(z)`, which turns the endpoint singularities of the quantile function
/// into Gaussian-damped tails; the integrand is formed in log space so large
/// `h` cannot overflow.
pub fn tgh_population_lmoments(g: f64, h: f64) -> Result<PopulationLMoments> {
    if !(0.0..1.0).contains(&h) {
        return Err(Error::Domain(format!(
            "population l-moments need h in [0, 1), got {h}"
        )));
    }
    if !g.is_finite() {
        return Err(Error::Domain("g must be finite".into()));
    }
    let damp = 1.0 - h;
    // beyond this |z| the integrand is below e^-45 relative to its peak
    let z_max = (g.abs() + (g * g + 90.0 * damp).sqrt()) / damp;
    let integrand = |z: f64| -> [f64; 4] {
        let q = skew_part(z, g);
        if q == 0.0 {
            return [0.0; 4];
        }
        let w = (q.abs().ln() - 0.5 * damp * z * z - LN_SQRT_2PI).exp().copysign(q);
        let u = norm_cdf(z);
        [
            w,
            w * (2.0 * u - 1.0),
            w * ((6.0 * u - 6.0) * u + 1.0),
            w * (((20.0 * u - 30.0) * u + 12.0) * u - 1.0),
        ]
    };
    let (lo, ok_lo) = quad::integrate(integrand, -z_max, 0.0, 1e-15, 1e-13, 400);
    let (hi, ok_hi) = quad::integrate(integrand, 0.0, z_max, 1e-15, 1e-13, 400);
    if !(ok_lo && ok_hi) {
        return Err(Error::numeric(
            "tgh_population_lmoments",
            format!("quadrature did not converge for g={g}, h={h}"),
        ));
    }
    let l: Vec<f64> = (0..4).map(|k| lo[k] + hi[k]).collect();
    if !(l[1] > 0.0) || l.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(
            "tgh_population_lmoments",
            format!("degenerate l-moments for g={g}, h={h}"),
        ));
    }
    Ok(PopulationLMoments {
        l1: l[0],
        l2: l[1],
        tau3: l[2] / l[1],
        tau4: l[3] / l[1],
    })
}

//! Standard normal helpers.

use statrs::function::erf;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

#[inline]
pub fn norm_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    norm_ln_pdf(x).exp()
}

/// Standard normal quantile for `u` in (0, 1).
pub fn norm_ppf(u: f64) -> f64 {
    if u <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if u >= 1.0 {
        return f64::INFINITY;
    }
    if u > 0.5 {
        return -lower_ppf(1.0 - u);
    }
    lower_ppf(u)
}

fn lower_ppf(u: f64) -> f64 {
    // the inverse-erfc seed is good to ~1e-12; Halley steps against an
    // accurate erfc bring it to full precision
    let mut x = -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * u);
    for _ in 0..2 {
        let e = norm_cdf(x) - u;
        let d = e / norm_pdf(x);
        x -= d / (1.0 + 0.5 * x * d);
    }
    x
}

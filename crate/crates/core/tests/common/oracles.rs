//! Independent reference computations shared by integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use tghrf::optim::{nelder_mead, Bounds, NelderMeadOptions};

pub fn exp_corr(coords: &[(f64, f64)], r: f64, nugget: f64) -> DMatrix<f64> {
    let n = coords.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            let d = (coords[i].0 - coords[j].0).hypot(coords[i].1 - coords[j].1);
            (1.0 - nugget) * (-d / r).exp()
        }
    })
}

/// Multivariate normal log-density of `y ~ N(a·1, b²C)` through an LU inverse
/// and determinant.
pub fn gaussian_loglik(y: &[f64], a: f64, b: f64, c: &DMatrix<f64>) -> f64 {
    let n = y.len();
    let cov = c * (b * b);
    let lu = cov.clone().lu();
    let det = lu.determinant();
    let inv = lu.try_inverse().expect("invertible");
    let e = DVector::from_iterator(n, y.iter().map(|v| v - a));
    let q = (e.transpose() * inv * &e)[(0, 0)];
    -0.5 * q - 0.5 * det.ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

#[derive(Debug, Clone, Copy)]
pub struct GaussMle {
    pub a: f64,
    pub b: f64,
    pub r: f64,
    pub nugget: f64,
    pub loglik: f64,
}

/// Gaussian ML for `y ~ N(a·1, b²R(r, ν))`: a by GLS and b² = quad/n in closed
/// form, (ln r, ν) by a tightly converged simplex on the profile likelihood.
pub fn gaussian_mle(coords: &[(f64, f64)], y: &[f64], r0: f64, nu0: f64, r_max: f64) -> GaussMle {
    let n = y.len() as f64;
    let yv = DVector::from_column_slice(y);
    let ones = DVector::from_element(y.len(), 1.0);
    let profile = |r: f64, nu: f64| -> (f64, f64, f64) {
        let c = exp_corr(coords, r, nu);
        let lu = c.clone().lu();
        let inv = match lu.try_inverse() {
            Some(m) => m,
            None => return (f64::NAN, f64::NAN, f64::NEG_INFINITY),
        };
        let logdet = c.clone().lu().determinant().ln();
        let a = (ones.transpose() * &inv * &yv)[(0, 0)] / (ones.transpose() * &inv * &ones)[(0, 0)];
        let e = &yv - &ones * a;
        let q = (e.transpose() * &inv * &e)[(0, 0)];
        let b2 = q / n;
        let ll = -0.5 * n * (b2.ln() + 1.0) - 0.5 * logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
        (a, b2.sqrt(), ll)
    };
    let bounds = [Bounds::new(-10.0, r_max.ln()), Bounds::new(0.0, 0.95)];
    let mut best = nelder_mead(
        |x| -profile(x[0].exp(), x[1]).2,
        &[r0.ln(), nu0],
        &[0.3, 0.05],
        &bounds,
        &NelderMeadOptions { max_evals: 20_000, f_tol: 1e-15, x_tol: 1e-11, restarts: 6 },
    );
    for &(lr, nu) in &[(0.0, 0.3), (1.0, 0.05), (-1.0, 0.6)] {
        let m = nelder_mead(
            |x| -profile(x[0].exp(), x[1]).2,
            &[lr, nu],
            &[0.3, 0.05],
            &bounds,
            &NelderMeadOptions { max_evals: 20_000, f_tol: 1e-15, x_tol: 1e-11, restarts: 6 },
        );
        if m.f < best.f {
            best = m;
        }
    }
    let (r, nugget) = (best.x[0].exp(), best.x[1]);
    let (a, b, loglik) = profile(r, nugget);
    GaussMle { a, b, r, nugget, loglik }
}

/// Anderson–Darling normality test with mean and variance estimated from the
/// sample; p-value from Stephens' piecewise approximation.
pub fn anderson_darling_normal_p(x: &[f64]) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut s: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
    s.sort_by(|a, b| a.total_cmp(b));
    let nd = Normal::new(0.0, 1.0).unwrap();
    let k = s.len();
    let mut acc = 0.0;
    for i in 0..k {
        let fi = nd.cdf(s[i]).clamp(1e-300, 1.0 - 1e-16);
        let fj = nd.cdf(s[k - 1 - i]).clamp(1e-300, 1.0 - 1e-16);
        acc += (2.0 * i as f64 + 1.0) * (fi.ln() + (1.0 - fj).ln());
    }
    let a2 = -n - acc / n;
    let a = a2 * (1.0 + 0.75 / n + 2.25 / (n * n));
    if a >= 0.6 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else if a >= 0.34 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a >= 0.2 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    }
}

/// Two-sample Kolmogorov–Smirnov p-value (asymptotic distribution).
pub fn ks_two_sample_p(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lam = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    // the series is useless near zero, where p is 1 to many digits
    if lam < 0.3 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let t = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64 * lam).powi(2)).exp();
        p += t;
        if t.abs() < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

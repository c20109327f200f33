//! Sample l-moments and l-moment matching for the Tukey g-and-h family.

use std::sync::OnceLock;

use nalgebra::{Matrix2, Vector2};
use num_traits::{FromPrimitive, Num};

use crate::error::{Error, Result};
use crate::optim::{nelder_mead, Bounds, NelderMeadOptions};
use crate::tgh::{tgh_population_lmoments, PopulationLMoments, TghParams};

/// First four l-moments of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LMoments<T> {
    pub l1: T,
    pub l2: T,
    pub l3: T,
    pub l4: T,
}

impl<T: Clone + Num> LMoments<T> {
    /// `(τ3, τ4)`, or `None` when `l2` is zero.
    pub fn ratios(&self) -> Option<(T, T)> {
        if self.l2.is_zero() {
            return None;
        }
        Some((
            self.l3.clone() / self.l2.clone(),
            self.l4.clone() / self.l2.clone(),
        ))
    }
}

impl LMoments<f64> {
    pub fn tau3(&self) -> f64 {
        self.l3 / self.l2
    }

    pub fn tau4(&self) -> f64 {
        self.l4 / self.l2
    }
}

/// Unbiased sample l-moments through probability-weighted moments
/// `b_m = n⁻¹ Σ_j [(j−1)⋯(j−m)] / [(n−1)⋯(n−m)] · Y_(j)`.
///
/// Generic so that exact rationals can be used as a check.
pub fn sample_lmoments<T>(y: &[T]) -> Result<LMoments<T>>
where
    T: Num + FromPrimitive + PartialOrd + Clone,
{
    let n = y.len();
    if n < 4 {
        return Err(Error::Input(format!("l-moments need at least 4 values, got {n}")));
    }
    let mut s = y.to_vec();
    let mut unordered = false;
    s.sort_by(|a, b| {
        a.partial_cmp(b).unwrap_or_else(|| {
            unordered = true;
            std::cmp::Ordering::Equal
        })
    });
    if unordered {
        return Err(Error::Input("sample contains unordered values (NaN?)".into()));
    }
    if s[0] == s[n - 1] {
        return Ok(LMoments {
            l1: s[0].clone(),
            l2: T::zero(),
            l3: T::zero(),
            l4: T::zero(),
        });
    }
    let int = |k: usize| T::from_usize(k).expect("integer fits the scalar type");
    let mut b = [T::zero(), T::zero(), T::zero(), T::zero()];
    for (idx, v) in s.iter().enumerate() {
        let j = idx + 1;
        let mut w = T::one();
        b[0] = b[0].clone() + v.clone();
        for (m, bm) in b.iter_mut().enumerate().skip(1) {
            if j <= m {
                break;
            }
            w = w * int(j - m) / int(n - m);
            *bm = bm.clone() + w.clone() * v.clone();
        }
    }
    let nn = int(n);
    let [b0, b1, b2, b3] = b.map(|x| x / nn.clone());
    let c = |k: usize| int(k);
    Ok(LMoments {
        l1: b0.clone(),
        l2: c(2) * b1.clone() - b0.clone(),
        l3: c(6) * b2.clone() - c(6) * b1.clone() + b0.clone(),
        l4: c(20) * b3 - c(30) * b2 + c(12) * b1 - b0,
    })
}

/// Result of l-moment matching.
#[derive(Debug, Clone, PartialEq)]
pub struct LMomentFit {
    pub params: TghParams<f64>,
    /// Squared distance between sample and fitted (τ3, τ4).
    pub residual: f64,
    /// The sample ratios could not be matched inside the admissible region
    /// (typically τ4 lighter-tailed than any h ≥ 0 allows).
    pub boundary: bool,
}

const G_MAX: f64 = 3.0;
const H_MAX: f64 = 0.95;
const MATCH_TOL: f64 = 1e-10;

struct SeedGrid {
    points: Vec<(f64, f64, f64, f64)>,
}

fn seed_grid() -> &'static SeedGrid {
    static GRID: OnceLock<SeedGrid> = OnceLock::new();
    GRID.get_or_init(|| {
        let mut points = Vec::new();
        for gi in -15..=15 {
            for hi in 0..=6 {
                let (g, h) = (gi as f64 * 0.1, hi as f64 * 0.1);
                if let Ok(p) = tgh_population_lmoments(g, h) {
                    points.push((g, h, p.tau3, p.tau4));
                }
            }
        }
        SeedGrid { points }
    })
}

fn ratio_gap(g: f64, h: f64, t3: f64, t4: f64) -> Option<Vector2<f64>> {
    tgh_population_lmoments(g, h)
        .ok()
        .map(|p| Vector2::new(p.tau3 - t3, p.tau4 - t4))
}

/// Estimates TGH parameters by matching l-skewness and l-kurtosis, then
/// scale and location from `l2` and `l1`.
pub fn lmoment_match(y: &[f64]) -> Result<LMomentFit> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("sample contains non-finite values".into()));
    }
    let lm = sample_lmoments(y)?;
    lmoment_match_moments(&lm)
}

/// Matching from given l-moments.
pub fn lmoment_match_moments(lm: &LMoments<f64>) -> Result<LMomentFit> {
    if !(lm.l2 > 0.0) {
        return Err(Error::Fit("zero variance: l2 is not positive".into()));
    }
    let (t3, t4) = (lm.tau3(), lm.tau4());
    let obj = |g: f64, h: f64| ratio_gap(g, h, t3, t4).map_or(f64::INFINITY, |r| r.norm_squared());

    let &(g0, h0, _, _) = seed_grid()
        .points
        .iter()
        .min_by(|a, b| {
            let da = (a.2 - t3).powi(2) + (a.3 - t4).powi(2);
            let db = (b.2 - t3).powi(2) + (b.3 - t4).powi(2);
            da.total_cmp(&db)
        })
        .ok_or_else(|| Error::numeric("lmoment_match", "empty seed grid"))?;

    let bounds = [Bounds::new(-G_MAX, G_MAX), Bounds::new(0.0, H_MAX)];
    let nm = nelder_mead(
        |x| obj(x[0], x[1]),
        &[g0, h0],
        &[0.05, 0.05],
        &bounds,
        &NelderMeadOptions {
            f_tol: 1e-16,
            x_tol: 1e-9,
            ..Default::default()
        },
    );
    if !nm.f.is_finite() {
        return Err(Error::Optimizer("l-moment matching found no finite objective".into()));
    }
    let (mut g, mut h, mut f) = (nm.x[0], nm.x[1], nm.f);

    // Gauss–Newton polish on the 2×2 system with a central-difference Jacobian.
    let step = 1e-5;
    for _ in 0..30 {
        if f < 1e-26 {
            break;
        }
        let Some(r) = ratio_gap(g, h, t3, t4) else { break };
        let hs = if h < step { 0.0 } else { step };
        let (Some(gp), Some(gm)) = (ratio_gap(g + step, h, t3, t4), ratio_gap(g - step, h, t3, t4)) else {
            break;
        };
        let (Some(hp), Some(hm)) = (ratio_gap(g, h + step, t3, t4), ratio_gap(g, h - hs, t3, t4)) else {
            break;
        };
        let jg = (gp - gm) / (2.0 * step);
        let jh = (hp - hm) / (step + hs);
        let jac = Matrix2::from_columns(&[jg, jh]);
        let Some(delta) = jac.try_inverse().map(|inv| -(inv * r)) else { break };
        let mut lambda = 1.0;
        let mut improved = false;
        while lambda > 1e-4 {
            let gn = (g + lambda * delta[0]).clamp(-G_MAX, G_MAX);
            let hn = (h + lambda * delta[1]).clamp(0.0, H_MAX);
            let fnew = obj(gn, hn);
            if fnew < f {
                g = gn;
                h = hn;
                f = fnew;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }

    let pop: PopulationLMoments = tgh_population_lmoments(g, h)?;
    let b = lm.l2 / pop.l2;
    let a = lm.l1 - b * pop.l1;
    let params = TghParams::new(a, b, g, h)?;
    Ok(LMomentFit {
        params,
        residual: f,
        boundary: f > MATCH_TOL,
    })
}

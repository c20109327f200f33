//! Low-rank TGH random field: the correlation is replaced by
//! `E_L (n·p·Λ_L^m) E_Lᵀ` with `p = 1/Σλ_l^m`, the range fixed at the longest
//! minimum-spanning-tree edge, and the scale exponent `m` estimated.
//!
//! The rank-L matrix is singular, so the orthogonal complement of `E_L`
//! carries an isotropic variance `δ`, the mean eigenvalue discarded from the
//! correlation matrix (floored at 1e−6). At `L = n` the complement is empty.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::{mst_max_edge, SiteSet};
use crate::kernels::{cov_matrix, exact_eigs, nystrom_eigs, select_landmarks, EigenBasis, ExpKernelParams};
use crate::optim::{brent, nelder_mead, Bounds, NelderMeadOptions};
use crate::rf::{
    assemble, initial_theta1, latent, theta1_block, theta1_intervals, Intervals, SpatialData,
    Theta1Frame, G_BOUND, H_BOUND,
};
use crate::tgh::TghParams;

pub const M_MIN: f64 = 0.1;
pub const M_MAX: f64 = 50.0;
const RESIDUAL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisMethod {
    Exact,
    /// Nyström with this many uniformly drawn landmarks.
    Nystrom { landmarks: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct LowRankSpec {
    pub basis: EigenBasis,
    /// Range of the correlation the basis was built from.
    pub r: f64,
    /// Variance of the complement of the basis.
    pub residual: f64,
}

impl LowRankSpec {
    pub fn from_basis(basis: EigenBasis, r: f64) -> Result<Self> {
        let n = basis.n() as f64;
        let l = basis.rank();
        if l == 0 {
            return Err(Error::Input("empty eigen-basis".into()));
        }
        let kept: f64 = basis.values.iter().sum();
        let residual = if basis.rank() < basis.n() {
            ((n - kept) / (n - l as f64)).max(RESIDUAL_FLOOR)
        } else {
            0.0
        };
        Ok(Self { basis, r, residual })
    }

    /// Basis of the unit-sill exponential correlation with `r` = longest MST edge.
    pub fn build(sites: &SiteSet<f64>, rank: usize, method: BasisMethod) -> Result<Self> {
        let r = mst_max_edge(sites)?;
        if !(r > 0.0) {
            return Err(Error::Input("sites coincide: spanning-tree range is zero".into()));
        }
        let kernel = ExpKernelParams::new(1.0, 0.0, r)?;
        let basis = match method {
            BasisMethod::Exact => exact_eigs(&cov_matrix(sites, &kernel)?, rank)?,
            BasisMethod::Nystrom { landmarks, seed } => {
                let ids = select_landmarks(sites.len(), landmarks.min(sites.len()), seed)?;
                nystrom_eigs(sites, &kernel, &ids, rank)?
            }
        };
        Self::from_basis(basis, r)
    }

    pub fn rank(&self) -> usize {
        self.basis.rank()
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    /// `n·p·λ_l^m`, computed in log space.
    pub fn scaled_values(&self, m: f64) -> DVector<f64> {
        let logs: Vec<f64> = self.basis.values.iter().map(|v| m * v.ln()).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logs.iter().map(|v| (v - top).exp()).sum();
        let n = self.n() as f64;
        DVector::from_iterator(logs.len(), logs.iter().map(|v| n * (v - top).exp() / total))
    }

    /// Draw `Z` from the represented covariance, complement included.
    pub fn sample_latent(&self, m: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let n = self.n();
        let e = &self.basis.vectors;
        let d = self.scaled_values(m);
        let xi = DVector::from_iterator(d.len(), d.iter().map(|v| v.sqrt() * rng.sample::<f64, _>(StandardNormal)));
        let mut z = e * xi;
        if self.residual > 0.0 {
            let eta = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let proj = &eta - e * e.tr_mul(&eta);
            z += proj * self.residual.sqrt();
        }
        z
    }

    pub fn corr(&self, m: f64) -> LowRankCorr<'_> {
        LowRankCorr {
            spec: self,
            scaled: self.scaled_values(m),
        }
    }
}

/// Implicit `E D Eᵀ` with `D = n·p·Λ^m`.
#[derive(Debug, Clone)]
pub struct LowRankCorr<'a> {
    spec: &'a LowRankSpec,
    pub scaled: DVector<f64>,
}

impl LowRankCorr<'_> {
    pub fn matvec(&self, v: &DVector<f64>) -> DVector<f64> {
        let e = &self.spec.basis.vectors;
        let w = e.tr_mul(v).component_mul(&self.scaled);
        e * w
    }

    pub fn trace(&self) -> f64 {
        self.scaled.sum()
    }

    /// The represented matrix, without the complement term.
    pub fn dense(&self) -> DMatrix<f64> {
        let e = &self.spec.basis.vectors;
        let mut scaled = e.clone();
        for (l, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.scaled[l];
        }
        scaled * e.transpose()
    }

    /// The full covariance used by the likelihood: `E D Eᵀ + δ(I − E Eᵀ)`.
    pub fn dense_with_residual(&self) -> DMatrix<f64> {
        let n = self.spec.n();
        let e = &self.spec.basis.vectors;
        let delta = self.spec.residual;
        self.dense() + (DMatrix::identity(n, n) - e * e.transpose()) * delta
    }

    /// `(quad, logdet)` of `Z` under the represented covariance.
    pub fn quad_logdet(&self, z: &DVector<f64>) -> (f64, f64) {
        let e = &self.spec.basis.vectors;
        let w = e.tr_mul(z);
        let mut quad = 0.0;
        let mut logdet = 0.0;
        for l in 0..w.len() {
            quad += w[l] * w[l] / self.scaled[l];
            logdet += self.scaled[l].ln();
        }
        let rest = self.spec.n() - w.len();
        if rest > 0 {
            let delta = self.spec.residual;
            quad += (z.norm_squared() - w.norm_squared()).max(0.0) / delta;
            logdet += rest as f64 * delta.ln();
        }
        (quad, logdet)
    }

    fn gauss(&self, z: &DVector<f64>) -> f64 {
        let (q, ld) = self.quad_logdet(z);
        assemble(q, ld, z.len(), 0.0)
    }
}

pub fn lowrank_loglik(params: &TghParams<f64>, m: f64, spec: &LowRankSpec, data: &SpatialData) -> Result<f64> {
    if data.len() != spec.n() {
        return Err(Error::Input(format!("basis has {} rows, data {} sites", spec.n(), data.len())));
    }
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::Input(format!("scale exponent must be positive, got {m}")));
    }
    let lat = latent(params, data, "lowrank_loglik")?;
    Ok(spec.corr(m).gauss(&lat.z) - lat.ln_jac)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankModel {
    pub params: TghParams<f64>,
    pub m: f64,
    pub r: f64,
    pub rank: usize,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<f64>,
    pub intervals: Intervals,
}

#[derive(Debug, Clone)]
pub struct LowRankFitOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub intervals: bool,
}

impl Default for LowRankFitOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-6,
            intervals: true,
        }
    }
}

/// Alternating maximization over θ₁ and `m ∈ [0.1, 50]`, then a joint
/// simplex polish (cheap here: each evaluation is O(nL)).
pub fn fit_lowrank(
    data: &SpatialData,
    spec: &LowRankSpec,
    init: Option<(TghParams<f64>, f64)>,
    opts: &LowRankFitOptions,
) -> Result<LowRankModel> {
    if spec.rank() < 10 {
        return Err(Error::Input(format!("low-rank fit needs L ≥ 10, got {}", spec.rank())));
    }
    if data.len() != spec.n() {
        return Err(Error::Input(format!("basis has {} rows, data {} sites", spec.n(), data.len())));
    }
    let (mut p, mut m) = match init {
        Some((p, m)) => (p, m.clamp(M_MIN, M_MAX)),
        None => (initial_theta1(data, false)?, 1.0),
    };
    let frame = Theta1Frame { a0: p.a, b0: p.b };
    let ll_at = |p: &TghParams<f64>, m: f64| -> f64 {
        match latent(p, data, "fit_lowrank") {
            Ok(lat) => spec.corr(m).gauss(&lat.z) - lat.ln_jac,
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let mut ll = ll_at(&p, m);
    if !ll.is_finite() {
        return Err(Error::numeric("fit_lowrank", "log-likelihood at the starting point is not finite"));
    }
    let mut history = vec![ll];
    let inner = NelderMeadOptions {
        f_tol: 1e-10,
        x_tol: 1e-8,
        ..Default::default()
    };
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let corr = spec.corr(m);
        let (p1, _) = theta1_block(data, &frame, &p, false, &inner, |z| corr.gauss(z));
        p = p1;
        let lat = latent(&p, data, "fit_lowrank")?;
        let (lm, f) = brent(
            |lm| -spec.corr(lm.exp()).gauss(&lat.z),
            M_MIN.ln(),
            M_MAX.ln(),
            m.ln(),
            1e-10,
            200,
        );
        m = lm.exp();
        let new = -f - lat.ln_jac;
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

    let x1 = frame.to_x(&p);
    let x0 = [x1[0], x1[1], x1[2], x1[3], m.ln()];
    let bounds = [
        Bounds::free(),
        Bounds::new(-20.0, 20.0),
        Bounds::new(-G_BOUND, G_BOUND),
        Bounds::new(0.0, H_BOUND),
        Bounds::new(M_MIN.ln(), M_MAX.ln()),
    ];
    let polish = nelder_mead(
        |x| -ll_at(&frame.from_x(&x[..4], None), x[4].exp()),
        &x0,
        &[0.01, 0.01, 0.01, 0.01, 0.02],
        &bounds,
        &NelderMeadOptions {
            max_evals: 6000,
            f_tol: 1e-13,
            x_tol: 1e-10,
            restarts: 3,
        },
    );
    if -polish.f > ll {
        p = frame.from_x(&polish.x[..4], None);
        m = polish.x[4].exp();
        ll = -polish.f;
        history.push(ll);
    }

    let intervals = if opts.intervals {
        let corr = spec.corr(m);
        theta1_intervals(data, &p, |z| corr.gauss(z))
    } else {
        Intervals::unavailable()
    };
    Ok(LowRankModel {
        params: p,
        m,
        r: spec.r,
        rank: spec.rank(),
        loglik: ll,
        iterations,
        converged,
        history,
        intervals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridSpec;

    fn spec(n_side: usize, rank: usize) -> LowRankSpec {
        LowRankSpec::build(&GridSpec::<f64>::unit(n_side).unwrap().sites(), rank, BasisMethod::Exact).unwrap()
    }

    #[test]
    fn full_rank_unit_exponent_is_the_correlation() {
        let sites = GridSpec::<f64>::unit(6).unwrap().sites();
        let s = LowRankSpec::build(&sites, 36, BasisMethod::Exact).unwrap();
        assert_eq!(s.r, 1.0);
        let r = cov_matrix(&sites, &ExpKernelParams::new(1.0, 0.0, 1.0).unwrap()).unwrap();
        assert!((s.corr(1.0).dense() - r).amax() < 1e-8);
        assert_eq!(s.residual, 0.0);
    }

    #[test]
    fn trace_is_n() {
        let s = spec(7, 12);
        for &m in &[0.1, 0.7, 1.0, 3.0, 50.0] {
            assert!((s.corr(m).trace() - 49.0).abs() < 1e-8);
        }
    }

    #[test]
    fn large_exponent_concentrates_on_leading_vector() {
        let s = spec(7, 12);
        let d = s.corr(50.0).dense();
        let e1 = s.basis.vectors.column(0);
        let proj = &e1 * e1.transpose();
        let cos = d.dot(&proj) / (d.norm() * proj.norm());
        assert!(cos > 0.999, "cosine {cos}");
    }

    #[test]
    fn matvec_and_logdet_match_dense() {
        let s = spec(8, 20);
        let c = s.corr(1.7);
        let v = DVector::from_fn(64, |i, _| (i as f64 * 0.37).sin());
        assert!((c.matvec(&v) - c.dense() * &v).amax() < 1e-10);
        let full = c.dense_with_residual();
        let (q, ld) = c.quad_logdet(&v);
        let lu = full.clone().lu();
        assert!((ld - lu.determinant().ln()).abs() < 1e-6);
        let qd = (v.transpose() * full.try_inverse().unwrap() * &v)[(0, 0)];
        assert!((q - qd).abs() < 1e-8 * qd);
    }

    #[test]
    fn rank_below_ten_rejected() {
        let sites = GridSpec::<f64>::unit(6).unwrap().sites();
        let s = LowRankSpec::build(&sites, 5, BasisMethod::Exact).unwrap();
        let d = SpatialData::new(sites, (0..36).map(|i| i as f64).collect()).unwrap();
        assert!(matches!(fit_lowrank(&d, &s, None, &LowRankFitOptions::default()), Err(Error::Input(_))));
    }
}

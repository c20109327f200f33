//! Synthetic TGH random fields.

mod replicate;

pub use replicate::{
    replicate_experiment, uniform_sites, ExperimentOutput, LowRankBConfig, LowRankBasis, Protocol, SparseCConfig,
};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{FieldFrame, GridSpec, SiteSet};
use crate::kernels::{cov_matrix, exact_eigs, ExpKernelParams};
use crate::tgh::{tau_gh, TghParams};

/// Largest site count sampled through a dense Cholesky factor by default.
pub const CHOLESKY_LIMIT: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Auto,
    Cholesky,
    Eigen,
}

/// Draws unit-variance Gaussian fields `Z ~ N(0, R)` with `R` the kernel's
/// correlation matrix.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    /// `R = F Fᵀ`; lower-triangular for Cholesky, `E Λ^{1/2}` for eigen.
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(sites: &SiteSet<f64>, kernel: &ExpKernelParams<f64>, kind: SamplerKind) -> Result<Self> {
        let corr = cov_matrix(sites, &kernel.normalized())?;
        let n = sites.len();
        let use_chol = match kind {
            SamplerKind::Auto => n <= CHOLESKY_LIMIT,
            SamplerKind::Cholesky => true,
            SamplerKind::Eigen => false,
        };
        let factor = if use_chol {
            corr.cholesky()
                .ok_or_else(|| Error::Decomposition("correlation matrix is not positive definite".into()))?
                .unpack()
        } else {
            let basis = exact_eigs(&corr, n)?;
            let mut f = basis.vectors;
            for (l, mut col) in f.column_iter_mut().enumerate() {
                col *= basis.values[l].sqrt();
            }
            f
        };
        Ok(Self { factor })
    }

    pub fn n(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let k = self.factor.ncols();
        let e = DVector::from_iterator(k, (0..k).map(|_| StandardNormal.sample(rng)));
        &self.factor * e
    }
}

/// Random stream for replication `rep` of a run seeded with `seed`.
pub fn rep_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// `a + b·τ(z)` elementwise.
pub fn apply_tgh(z: &DVector<f64>, p: &TghParams<f64>) -> Vec<f64> {
    z.iter().map(|&v| p.a + p.b * tau_gh(v, p.g, p.h)).collect()
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub grid: GridSpec<f64>,
    pub params: TghParams<f64>,
    pub kernel: ExpKernelParams<f64>,
    pub seed: u64,
    pub reps: usize,
    pub sampler: SamplerKind,
}

impl SimConfig {
    pub fn new(grid: GridSpec<f64>, params: TghParams<f64>, kernel: ExpKernelParams<f64>, seed: u64, reps: usize) -> Self {
        Self {
            grid,
            params,
            kernel,
            seed,
            reps,
            sampler: SamplerKind::Auto,
        }
    }
}

/// One complete frame per replication (`t` = replication index). Replication
/// `k` always uses stream `k` of the seed, whatever the thread count.
pub fn simulate_tgh_field(config: &SimConfig) -> Result<Vec<FieldFrame<f64>>> {
    if config.reps == 0 {
        return Err(Error::Input("reps must be at least 1".into()));
    }
    config.params.require_monotone()?;
    let sites = config.grid.sites();
    let sampler = GaussianSampler::new(&sites, &config.kernel, config.sampler)?;
    (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let z = sampler.sample(&mut rep_rng(config.seed, rep as u64));
            FieldFrame::complete(config.grid, rep as i64, apply_tgh(&z, &config.params))
        })
        .collect()
}

/// Fields on arbitrary sites, one vector per replication.
pub fn simulate_on_sites(
    sites: &SiteSet<f64>,
    params: &TghParams<f64>,
    kernel: &ExpKernelParams<f64>,
    seed: u64,
    reps: usize,
) -> Result<Vec<Vec<f64>>> {
    params.require_monotone()?;
    let sampler = GaussianSampler::new(sites, kernel, SamplerKind::Auto)?;
    Ok((0..reps)
        .into_par_iter()
        .map(|rep| apply_tgh(&sampler.sample(&mut rep_rng(seed, rep as u64)), params))
        .collect())
}

//! Local approximate TGH process: each target site gets its own small design,
//! chosen greedily by reduction of the predictive variance, and its own
//! (a, b, g, h, r).
//!
//! Naming: in the conditioning recursions the vector `gvec` and scalar
//! `hscal` are the partitioned-inverse quantities, not the TGH g and h.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::field::{mst_max_edge, pairwise_distances, sorted_by_distance, SiteSet};
use crate::full::{cholesky_parts, correlation, DenseGauss};
use crate::kernels::{robust_variogram_wls, ExpKernelParams};
use crate::optim::{brent, newton_box, Bounds, NelderMeadOptions};
use crate::rf::{initial_theta1, latent, theta1_block, SpatialData, Theta1Frame, G_BOUND, H_BOUND};
use crate::tgh::TghParams;

/// Nearest neighbours taken before greedy selection starts.
pub const NN_SEED: usize = 6;
pub const MIN_LOCAL_DESIGN: usize = 30;

/// Covariance and residuals seen from one target location.
#[derive(Debug, Clone)]
pub struct LocalProblem<'a> {
    pub sites: &'a SiteSet<f64>,
    pub kernel: ExpKernelParams<f64>,
    pub target: (f64, f64),
    /// Latent residuals ε, one per site.
    pub eps: &'a [f64],
    /// Mean at the target.
    pub mu0: f64,
}

impl LocalProblem<'_> {
    fn c(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.kernel.sill()
        } else {
            self.kernel.cov(self.sites[i].distance(&self.sites[j]))
        }
    }

    fn c0(&self, i: usize) -> f64 {
        self.kernel.cov(self.sites[i].distance_to(self.target.0, self.target.1))
    }

    fn cross(&self, design: &[usize], u: usize) -> DVector<f64> {
        DVector::from_iterator(design.len(), design.iter().map(|&i| self.c(i, u)))
    }
}

/// Sequential conditioning state for a target `s₀` given design `s_j`.
#[derive(Debug, Clone)]
pub struct LocalState {
    pub design_ids: Vec<usize>,
    /// `C⁻¹(s_j, s_j) ε_j`.
    pub cinv_eps: DVector<f64>,
    /// `C⁻¹(s_j, s_j)`, grown by the partitioned inverse.
    pub kinv: DMatrix<f64>,
    /// `C⁻¹(s_j, s_j) c(s_j, s₀)`.
    pub cinv_c0: DVector<f64>,
    /// Conditional variance at the target, `β_j(s₀)`.
    pub beta: f64,
    /// `ε_jᵀ C⁻¹ ε_j`.
    pub psi: f64,
    /// Conditional mean at the target.
    pub mu: f64,
    eps: Vec<f64>,
}

impl LocalState {
    pub fn new(p: &LocalProblem) -> Self {
        Self {
            design_ids: Vec::new(),
            cinv_eps: DVector::zeros(0),
            kinv: DMatrix::zeros(0, 0),
            cinv_c0: DVector::zeros(0),
            beta: p.kernel.sill(),
            psi: 0.0,
            mu: p.mu0,
            eps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.design_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.design_ids.is_empty()
    }

    /// `β_j(u)` and `C⁻¹k` for a candidate `u`.
    fn schur(&self, p: &LocalProblem, u: usize) -> Result<(DVector<f64>, DVector<f64>, f64)> {
        if self.design_ids.contains(&u) {
            return Err(Error::Input(format!("site {} is already in the design", p.sites[u].id)));
        }
        let k = p.cross(&self.design_ids, u);
        let ku = &self.kinv * &k;
        let beta_u = p.c(u, u) - k.dot(&ku);
        if !(beta_u > 1e-12 * p.c(u, u)) {
            return Err(Error::Conditioning(format!(
                "conditional variance {beta_u:e} at site {} is not positive (duplicate or near-duplicate site)",
                p.sites[u].id
            )));
        }
        Ok((k, ku, beta_u))
    }

    /// Adds site `u` to the design in O(j²).
    pub fn extend(&mut self, p: &LocalProblem, u: usize) -> Result<()> {
        let (_, ku, bu) = self.schur(p, u)?;
        let j = self.len();
        // partitioned inverse with gvec = −C⁻¹k/β (note the sign)
        let gvec = -&ku / bu;
        let eps_u = p.eps[u];
        let hscal = gvec.dot(&DVector::from_column_slice(&self.eps));
        let c0u = p.c0(u);
        let c0g = gvec.dot(&DVector::from_iterator(j, self.design_ids.iter().map(|&i| p.c0(i))));

        self.mu += c0g * (hscal * bu + eps_u) + c0u * (hscal + eps_u / bu);
        self.beta -= bu * c0g * c0g + 2.0 * c0u * c0g + c0u * c0u / bu;
        self.psi += hscal * hscal * bu + 2.0 * eps_u * hscal + eps_u * eps_u / bu;

        let mut ce = self.cinv_eps.clone().insert_row(j, 0.0);
        for i in 0..j {
            ce[i] += gvec[i] * (hscal * bu + eps_u);
        }
        ce[j] = hscal + eps_u / bu;
        self.cinv_eps = ce;

        let mut cc = self.cinv_c0.clone().insert_row(j, 0.0);
        for i in 0..j {
            cc[i] += gvec[i] * (c0g * bu + c0u);
        }
        cc[j] = c0g + c0u / bu;
        self.cinv_c0 = cc;

        let mut kinv = DMatrix::zeros(j + 1, j + 1);
        for a in 0..j {
            for b in 0..j {
                kinv[(a, b)] = self.kinv[(a, b)] + bu * gvec[a] * gvec[b];
            }
            kinv[(a, j)] = gvec[a];
            kinv[(j, a)] = gvec[a];
        }
        kinv[(j, j)] = 1.0 / bu;
        self.kinv = kinv;

        self.design_ids.push(u);
        self.eps.push(eps_u);
        Ok(())
    }

    /// Drop in `β(s₀)` from adding `u`:
    /// `(c(s₀,u) − kᵀC⁻¹c₀)² / (c(u,u) − kᵀC⁻¹k)`.
    pub fn mspe_reduction(&self, p: &LocalProblem, u: usize) -> Result<f64> {
        let (k, _, bu) = self.schur(p, u)?;
        let num = p.c0(u) - k.dot(&self.cinv_c0);
        Ok(num * num / bu)
    }

    /// `ψ_j β_j(s₀) / (j − 2)`; needs more than two design points.
    pub fn conditional_variance(&self) -> Option<f64> {
        let j = self.len();
        (j > 2).then(|| self.psi / (j as f64 - 2.0) * self.beta)
    }
}

#[derive(Debug, Clone)]
pub struct DesignOptions {
    pub budget: usize,
    /// Candidates considered per step: the `pool` nearest sites not yet chosen.
    pub pool: usize,
    pub seed_size: usize,
    /// Stop once the best reduction is below this; `None` means
    /// `1e−6 · c(s₀, s₀)`.
    pub threshold: Option<f64>,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            budget: 200,
            pool: 1000,
            seed_size: NN_SEED,
            threshold: None,
        }
    }
}

impl DesignOptions {
    /// Fills the budget regardless of how small the reductions become. Used
    /// for estimation, which needs more sites than prediction does.
    pub fn filled(budget: usize) -> Self {
        Self {
            budget,
            threshold: Some(0.0),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalDesign {
    /// Site positions in selection order.
    pub ids: Vec<usize>,
    /// Variance reduction achieved by each pick.
    pub reductions: Vec<f64>,
    /// Final conditional variance at the target.
    pub beta: f64,
}

/// Greedy MSPE design around `target`. `exclude` (usually the target's own
/// site) is never selected.
///
/// Conditional covariances for the whole candidate pool are kept as a pivoted
/// Cholesky factor, so each step costs O(pool · j).
pub fn greedy_local_design(
    sites: &SiteSet<f64>,
    kernel: &ExpKernelParams<f64>,
    target: (f64, f64),
    exclude: Option<usize>,
    opts: &DesignOptions,
) -> Result<LocalDesign> {
    if opts.budget == 0 {
        return Err(Error::Input("design budget must be positive".into()));
    }
    if opts.pool < opts.budget.min(opts.seed_size).max(1) {
        return Err(Error::Input(format!("candidate pool {} is too small", opts.pool)));
    }
    let sill = kernel.sill();
    let threshold = opts.threshold.unwrap_or(1e-6 * sill);
    let order: Vec<usize> = sorted_by_distance(sites, target.0, target.1)
        .into_iter()
        .filter(|&i| Some(i) != exclude)
        .take(opts.pool + opts.budget)
        .collect();
    let np = order.len();
    if np == 0 {
        warn!("no candidate sites for the local design at {target:?}");
        return Ok(LocalDesign { ids: vec![], reductions: vec![], beta: sill });
    }
    let c = |a: usize, b: usize| -> f64 {
        if a == b {
            sill
        } else {
            kernel.cov(sites[order[a]].distance(&sites[order[b]]))
        }
    };
    let mut kuu = vec![sill; np];
    let mut k0u: Vec<f64> = order
        .iter()
        .map(|&i| kernel.cov(sites[i].distance_to(target.0, target.1)))
        .collect();
    let mut k00 = sill;
    let mut min_dist: Vec<f64> = order
        .iter()
        .map(|&i| sites[i].distance_to(target.0, target.1))
        .collect();
    let mut ls: Vec<Vec<f64>> = Vec::new();
    let mut l0: Vec<f64> = Vec::new();
    let mut chosen: Vec<usize> = Vec::new();
    let mut in_design = vec![false; np];
    let mut reductions = Vec::new();
    let mut trace_kinv = 0.0;

    // back substitution with the design rows of the pivoted factor
    let solve_upper = |ls: &Vec<Vec<f64>>, chosen: &Vec<usize>, v: &[f64]| -> Vec<f64> {
        let j = chosen.len();
        let mut w = vec![0.0; j];
        for a in (0..j).rev() {
            let mut s = v[a];
            for b in a + 1..j {
                s -= ls[a][chosen[b]] * w[b];
            }
            w[a] = s / ls[a][chosen[a]];
        }
        w
    };

    let seed = opts.seed_size.min(opts.budget);
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    while chosen.len() < opts.budget {
        let j = chosen.len();
        let red = |x: usize| if kuu[x] > 1e-12 * sill { k0u[x] * k0u[x] / kuu[x] } else { 0.0 };
        let pick = if j < seed {
            match (0..np).find(|&x| !in_design[x]) {
                Some(x) => x,
                None => break,
            }
        } else {
            let cands: Vec<usize> = (0..np).filter(|&x| !in_design[x]).take(opts.pool).collect();
            if cands.is_empty() {
                warn!("local design at {target:?} ran out of candidates after {j} sites");
                break;
            }
            let argmax = |set: &mut dyn Iterator<Item = usize>| -> (usize, f64) {
                set.fold((usize::MAX, f64::NEG_INFINITY), |(bx, br), x| {
                    let r = red(x);
                    if r > br { (x, r) } else { (bx, br) }
                })
            };
            let (best, delta) = argmax(&mut cands.iter().copied());
            if !(delta >= threshold) {
                break;
            }
            // screening radius, in units of the kernel range
            let w = solve_upper(&ls, &chosen, &l0);
            let nrm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            let lam_min = 1.0 / trace_kinv;
            let jf = j as f64;
            let arg = (delta / ((1.0 + jf.sqrt() * nrm).powi(2) + jf * delta / lam_min)).sqrt();
            let z = std_normal.inverse_cdf(arg.min(1.0 - 1e-16));
            let radius = z * kernel.r;
            let (screened, _) = argmax(&mut cands.iter().copied().filter(|&x| min_dist[x] <= radius));
            if screened != usize::MAX { screened } else { best }
        };
        let kappa = kuu[pick];
        if !(kappa > 1e-12 * sill) {
            return Err(Error::Conditioning(format!(
                "site {} is numerically dependent on the design",
                sites[order[pick]].id
            )));
        }
        reductions.push(red(pick));
        let sq = kappa.sqrt();
        let v: Vec<f64> = ls.iter().map(|l| l[pick]).collect();
        let w = solve_upper(&ls, &chosen, &v);
        trace_kinv += w.iter().map(|x| x * x).sum::<f64>() / kappa + 1.0 / kappa;

        let mut l: Vec<f64> = (0..np).map(|x| c(x, pick)).collect();
        for li in &ls {
            let a = li[pick];
            if a != 0.0 {
                for (lx, &lix) in l.iter_mut().zip(li) {
                    *lx -= lix * a;
                }
            }
        }
        for lx in l.iter_mut() {
            *lx /= sq;
        }
        let l0new = k0u[pick] / sq;
        for x in 0..np {
            kuu[x] -= l[x] * l[x];
            k0u[x] -= l0new * l[x];
        }
        k00 -= l0new * l0new;
        let site = &sites[order[pick]];
        for x in 0..np {
            let d = sites[order[x]].distance(site);
            if d < min_dist[x] {
                min_dist[x] = d;
            }
        }
        ls.push(l);
        l0.push(l0new);
        chosen.push(pick);
        in_design[pick] = true;
    }
    Ok(LocalDesign {
        ids: chosen.iter().map(|&x| order[x]).collect(),
        reductions,
        beta: k00,
    })
}

#[derive(Debug, Clone)]
pub struct LocalFitOptions {
    /// Fixed nugget share of the local correlation.
    pub nugget: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LocalFitOptions {
    fn default() -> Self {
        Self {
            nugget: 0.0,
            max_iter: 30,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    /// Position of the target in the site set.
    pub site: usize,
    pub x: f64,
    pub y: f64,
    /// Conditional location and scale at the target with the local g and h.
    pub params: TghParams<f64>,
    /// Fitted local (a, b, g, h).
    pub local: TghParams<f64>,
    pub lengthscale: f64,
    pub design_size: usize,
    pub loglik: f64,
    /// Set when the fit did not succeed; the numbers are then NaN.
    pub flag: Option<String>,
}

impl LocalFit {
    fn failed(data: &SpatialData, site: usize, design_size: usize, msg: String) -> Self {
        let nan = TghParams { a: f64::NAN, b: f64::NAN, g: f64::NAN, h: f64::NAN };
        Self {
            site,
            x: data.sites[site].x,
            y: data.sites[site].y,
            params: nan,
            local: nan,
            lengthscale: f64::NAN,
            design_size,
            loglik: f64::NAN,
            flag: Some(msg),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.flag.is_none()
    }
}

fn local_data(data: &SpatialData, target: usize, design: &[usize]) -> SpatialData {
    let mut idx = Vec::with_capacity(design.len() + 1);
    idx.push(target);
    idx.extend_from_slice(design);
    SpatialData {
        sites: data.sites.subset(&idx),
        values: idx.iter().map(|&i| data.values[i]).collect(),
    }
}

/// Conditional (a(s₀), b(s₀)) from the recursions over the design, target
/// at position 0 of `local`.
fn conditional(local: &SpatialData, p: &TghParams<f64>, r: f64, nugget: f64) -> Result<(f64, f64)> {
    let lat = latent(p, local, "conditional")?;
    let eps: Vec<f64> = lat.z.iter().map(|z| p.b * z).collect();
    let prob = LocalProblem {
        sites: &local.sites,
        kernel: ExpKernelParams::correlation(r, nugget)?,
        target: (local.sites[0].x, local.sites[0].y),
        eps: &eps,
        mu0: p.a,
    };
    let mut st = LocalState::new(&prob);
    for u in 1..local.len() {
        st.extend(&prob, u)?;
    }
    let var = st
        .conditional_variance()
        .ok_or_else(|| Error::Input("conditional variance needs more than two design sites".into()))?;
    Ok((st.mu, var.max(0.0).sqrt()))
}

/// Local TGH fit over the target and its design, (a, b, g, h, r) free.
/// Numerical trouble gives a flagged result; bad input is an error.
pub fn fit_local_tgh(
    data: &SpatialData,
    target: usize,
    design: &[usize],
    r_start: f64,
    init: Option<&TghParams<f64>>,
    opts: &LocalFitOptions,
) -> Result<LocalFit> {
    if design.len() < MIN_LOCAL_DESIGN {
        return Err(Error::Input(format!(
            "local fit needs a design of at least {MIN_LOCAL_DESIGN} sites, got {}",
            design.len()
        )));
    }
    if design.contains(&target) {
        return Err(Error::Input("design must not contain the target".into()));
    }
    let local = local_data(data, target, design);
    let start = match init {
        Some(p) if latent(p, &local, "fit_local_tgh").is_ok() => *p,
        _ => initial_theta1(&local, false)?,
    };
    match local_optimize(&local, start, r_start, opts) {
        Ok((p, r, ll)) => {
            let (a0, b0) = conditional(&local, &p, r, opts.nugget).unwrap_or((f64::NAN, f64::NAN));
            let flag = (!a0.is_finite() || !b0.is_finite())
                .then(|| "conditional moments at the target are not finite".to_string());
            Ok(LocalFit {
                site: target,
                x: data.sites[target].x,
                y: data.sites[target].y,
                params: TghParams { a: a0, b: b0, g: p.g, h: p.h },
                local: p,
                lengthscale: r,
                design_size: design.len(),
                loglik: ll,
                flag,
            })
        }
        Err(e) => Ok(LocalFit::failed(data, target, design.len(), e.to_string())),
    }
}

const THETA1_BOUNDS: [Bounds; 4] = [
    Bounds::free(),
    Bounds::new(-20.0, 20.0),
    Bounds::new(-G_BOUND, G_BOUND),
    Bounds::new(0.0, H_BOUND),
];

fn local_optimize(
    local: &SpatialData,
    mut p: TghParams<f64>,
    r_start: f64,
    opts: &LocalFitOptions,
) -> Result<(TghParams<f64>, f64, f64)> {
    let dist = pairwise_distances(&local.sites)?;
    let maxd = local.sites.max_distance();
    let (lo, hi) = ((1e-3 * maxd).ln(), (10.0 * maxd).ln());
    let mut lr = r_start.ln().clamp(lo, hi);
    let gauss_at = |lr: f64| -> Result<DenseGauss> {
        let (l, logdet) = cholesky_parts(correlation(&dist, lr.exp(), opts.nugget))?;
        Ok(DenseGauss { l, logdet })
    };
    let frame = Theta1Frame { a0: p.a, b0: p.b };
    let inner = NelderMeadOptions {
        f_tol: 1e-10,
        x_tol: 1e-8,
        restarts: 1,
        ..Default::default()
    };
    let joint = |x: &[f64; 5]| -> f64 {
        let q = frame.from_x(&x[..4], None);
        if !(x[4] >= lo && x[4] <= hi && q.g.abs() <= G_BOUND && (0.0..=H_BOUND).contains(&q.h)) {
            return f64::NEG_INFINITY;
        }
        match (latent(&q, local, "fit_local_tgh"), gauss_at(x[4])) {
            (Ok(l), Ok(g)) => g.eval(&l.z) - l.ln_jac,
            _ => f64::NEG_INFINITY,
        }
    };
    let pack = |p: &TghParams<f64>, lr: f64| -> [f64; 5] {
        let x = frame.to_x(p);
        [x[0], x[1], x[2], x[3], lr]
    };
    let lat = latent(&p, local, "fit_local_tgh")?;
    let mut ll = gauss_at(lr)?.eval(&lat.z) - lat.ln_jac;
    // simplex on the first pass and whenever Newton stalls, Newton otherwise
    let mut simplex = true;
    for _ in 0..opts.max_iter {
        let before = pack(&p, lr);
        let g = gauss_at(lr)?;
        let used_simplex = simplex;
        p = if simplex {
            theta1_block(local, &frame, &p, false, &inner, |z| g.eval(z)).0
        } else {
            // h is clamped so the difference stencil can straddle h = 0
            let obj = |x: &[f64]| match latent(&frame.from_x(&[x[0], x[1], x[2], x[3].max(0.0)], None), local, "fit_local_tgh") {
                Ok(l) => -(g.eval(&l.z) - l.ln_jac),
                Err(_) => f64::INFINITY,
            };
            let m = newton_box(obj, &frame.to_x(&p), &[1e-4; 4], &THETA1_BOUNDS, 1e-10, 20);
            frame.from_x(&[m.x[0], m.x[1], m.x[2], m.x[3].max(0.0)], None)
        };
        simplex = false;
        let lat = latent(&p, local, "fit_local_tgh")?;
        let (lr1, f) = brent(
            |x| gauss_at(x).map(|g| -g.eval(&lat.z)).unwrap_or(f64::INFINITY),
            lo,
            hi,
            lr,
            1e-7,
            100,
        );
        let mut new = -f - lat.ln_jac;
        if !new.is_finite() {
            return Err(Error::Optimizer("local log-likelihood is not finite".into()));
        }
        lr = lr1;
        // the block steps zig-zag along a ridge; follow the net move
        let after = pack(&p, lr);
        let mut alpha = 1.0;
        for _ in 0..6 {
            let mut x = after;
            for k in 0..5 {
                x[k] += alpha * (after[k] - before[k]);
            }
            let v = joint(&x);
            if v > new {
                new = v;
                p = frame.from_x(&x[..4], None);
                lr = x[4];
                alpha *= 2.0;
            } else {
                break;
            }
        }
        let gain = new - ll;
        ll = ll.max(new);
        if gain < opts.tol {
            if used_simplex {
                break;
            }
            simplex = true;
        }
    }
    Ok((p, lr.exp(), ll))
}

#[derive(Debug, Clone)]
pub struct SparseOptions {
    pub design: DesignOptions,
    pub local: LocalFitOptions,
    /// Gaussian-weighted smoothing of ln r, g and h across targets.
    pub smooth: bool,
    /// Skip the second design-and-fit pass.
    pub no_refine: bool,
    /// Sites to fit; all when `None`.
    pub targets: Option<Vec<usize>>,
    /// Starting range; from a variogram of the data when `None`.
    pub r0: Option<f64>,
    /// Smoothing bandwidth; twice the median nearest-neighbour spacing when `None`.
    pub bandwidth: Option<f64>,
}

impl Default for SparseOptions {
    fn default() -> Self {
        Self {
            design: DesignOptions::filled(200),
            local: LocalFitOptions::default(),
            smooth: false,
            no_refine: false,
            targets: None,
            r0: None,
            bandwidth: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SparseField {
    /// One entry per target, in target order.
    pub fits: Vec<LocalFit>,
    pub r0: f64,
    pub bandwidth: f64,
    pub failed: usize,
}

fn median_nn_spacing(sites: &SiteSet<f64>) -> f64 {
    let n = sites.len();
    let mut nn: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| sites[i].distance(&sites[j]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    nn.sort_by(|a, b| a.total_cmp(b));
    nn[n / 2]
}

fn starting_range(data: &SpatialData) -> Result<f64> {
    let edge = mst_max_edge(&data.sites)?;
    let maxd = data.sites.max_distance();
    Ok(match robust_variogram_wls(&data.sites, &data.values) {
        Ok(v) if v.params.tau2 > 0.05 * v.params.sill() => v.params.r.clamp(edge, maxd),
        _ => edge,
    })
}

/// Kernel-weighted averages of (ln r, g, h) over the successful fits.
fn smooth_surfaces(fits: &[LocalFit], bw: f64) -> Vec<Option<(f64, f64, f64)>> {
    let ok: Vec<&LocalFit> = fits.iter().filter(|f| f.is_ok()).collect();
    fits.par_iter()
        .map(|f| {
            if !f.is_ok() {
                return None;
            }
            let (mut w, mut lr, mut g, mut h) = (0.0, 0.0, 0.0, 0.0);
            for o in &ok {
                let d2 = (o.x - f.x).powi(2) + (o.y - f.y).powi(2);
                let wi = (-0.5 * d2 / (bw * bw)).exp();
                w += wi;
                lr += wi * o.lengthscale.ln();
                g += wi * o.local.g;
                h += wi * o.local.h;
            }
            Some(((lr / w).exp(), g / w, h / w))
        })
        .collect()
}

/// Per-site local fits over the field: designs with a common starting range,
/// independent fits, optional smoothing, then one refinement pass with
/// designs and starts taken from the (smoothed) first pass.
pub fn fit_sparse_field(data: &SpatialData, opts: &SparseOptions) -> Result<SparseField> {
    let n = data.len();
    if n <= MIN_LOCAL_DESIGN {
        return Err(Error::Input(format!(
            "sparse fit needs more than {MIN_LOCAL_DESIGN} sites, got {n}"
        )));
    }
    let targets: Vec<usize> = match &opts.targets {
        Some(t) => {
            if let Some(&bad) = t.iter().find(|&&i| i >= n) {
                return Err(Error::Input(format!("target {bad} out of range for {n} sites")));
            }
            t.clone()
        }
        None => (0..n).collect(),
    };
    if targets.is_empty() {
        return Err(Error::Input("no target sites".into()));
    }
    let r0 = match opts.r0 {
        Some(r) if r > 0.0 => r,
        Some(r) => return Err(Error::Input(format!("starting range must be positive, got {r}"))),
        None => starting_range(data)?,
    };
    let bw = opts.bandwidth.unwrap_or_else(|| 2.0 * median_nn_spacing(&data.sites));

    let one = |t: usize, r: f64, init: Option<TghParams<f64>>| -> LocalFit {
        let kernel = match ExpKernelParams::correlation(r, opts.local.nugget) {
            Ok(k) => k,
            Err(e) => return LocalFit::failed(data, t, 0, e.to_string()),
        };
        let s = &data.sites[t];
        let design = match greedy_local_design(&data.sites, &kernel, (s.x, s.y), Some(t), &opts.design) {
            Ok(d) => d,
            Err(e) => return LocalFit::failed(data, t, 0, e.to_string()),
        };
        match fit_local_tgh(data, t, &design.ids, r, init.as_ref(), &opts.local) {
            Ok(f) => f,
            Err(e) => LocalFit::failed(data, t, design.ids.len(), e.to_string()),
        }
    };

    let mut fits: Vec<LocalFit> = targets.par_iter().map(|&t| one(t, r0, None)).collect();
    let check = |fits: &[LocalFit]| -> Result<usize> {
        let failed = fits.iter().filter(|f| !f.is_ok()).count();
        if 2 * failed > fits.len() {
            let first = fits.iter().find_map(|f| f.flag.clone()).unwrap_or_default();
            return Err(Error::Fit(format!(
                "{failed} of {} local fits failed (first: {first})",
                fits.len()
            )));
        }
        Ok(failed)
    };
    check(&fits)?;

    if !opts.no_refine {
        let smoothed = if opts.smooth { smooth_surfaces(&fits, bw) } else { vec![None; fits.len()] };
        fits = fits
            .par_iter()
            .zip(smoothed.par_iter())
            .map(|(f, s)| {
                if !f.is_ok() {
                    return one(f.site, r0, None);
                }
                let (r, g, h) = s.unwrap_or((f.lengthscale, f.local.g, f.local.h));
                one(f.site, r, Some(TghParams { g, h, ..f.local }))
            })
            .collect();
    }

    if opts.smooth {
        let smoothed = smooth_surfaces(&fits, bw);
        fits = fits
            .par_iter()
            .zip(smoothed.par_iter())
            .map(|(f, s)| {
                let Some((r, g, h)) = *s else { return f.clone() };
                let p = TghParams { g, h, ..f.local };
                let local = match greedy_local_design(
                    &data.sites,
                    &ExpKernelParams { tau2: 1.0 - opts.local.nugget, sigma2: opts.local.nugget, r },
                    (f.x, f.y),
                    Some(f.site),
                    &opts.design,
                ) {
                    Ok(d) if d.ids.len() >= 3 => local_data(data, f.site, &d.ids),
                    _ => return f.clone(),
                };
                match conditional(&local, &p, r, opts.local.nugget) {
                    Ok((a0, b0)) if a0.is_finite() && b0.is_finite() => LocalFit {
                        params: TghParams { a: a0, b: b0, g, h },
                        local: p,
                        lengthscale: r,
                        ..f.clone()
                    },
                    _ => LocalFit { local: p, lengthscale: r, params: TghParams { g, h, ..f.params }, ..f.clone() },
                }
            })
            .collect();
    }
    let failed = check(&fits)?;
    Ok(SparseField { fits, r0, bandwidth: bw, failed })
}

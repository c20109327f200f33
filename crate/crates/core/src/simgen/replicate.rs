//! Replication harnesses: the sparse estimator on a square grid (local fits at
//! the centre cell over a (g, h) design) and the low-rank versus full
//! comparison over a range of basis sizes.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{GridSpec, SiteSet};
use crate::full::{fit_full, FullFitOptions};
use crate::io::{fmt_f64, Table};
use crate::kernels::ExpKernelParams;
use crate::lowrank::{fit_lowrank, BasisMethod, LowRankFitOptions, LowRankSpec};
use crate::rf::{quantile, SpatialData};
use crate::sparse::{fit_local_tgh, greedy_local_design, DesignOptions, LocalFitOptions};
use crate::tgh::TghParams;

use super::{apply_tgh, rep_rng, GaussianSampler, SamplerKind};

#[derive(Debug, Clone)]
pub struct SparseCConfig {
    pub side: usize,
    pub a: f64,
    pub b: f64,
    pub r: f64,
    pub g_values: Vec<f64>,
    pub h_values: Vec<f64>,
    pub reps: usize,
    pub budget: usize,
    pub seed: u64,
    pub local: LocalFitOptions,
}

impl Default for SparseCConfig {
    fn default() -> Self {
        Self {
            side: 39,
            a: 0.0,
            b: 1.0,
            r: 1.0,
            g_values: vec![-0.5, 0.0, 0.5],
            h_values: vec![0.0, 0.25, 0.5],
            reps: 100,
            budget: 200,
            seed: 1,
            local: LocalFitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LowRankBasis {
    /// One exact decomposition, truncated for each L.
    Exact,
    /// A Nyström basis per L with `factor · L` landmarks.
    Nystrom { factor: usize },
}

#[derive(Debug, Clone)]
pub struct LowRankBConfig {
    pub n: usize,
    pub truth: TghParams<f64>,
    /// Range of the simulated field.
    pub r: f64,
    pub ranks: Vec<usize>,
    pub basis: LowRankBasis,
    pub full: bool,
    pub reps: usize,
    pub seed: u64,
}

impl Default for LowRankBConfig {
    fn default() -> Self {
        Self {
            n: 1500,
            truth: TghParams { a: 0.0, b: 1.0, g: 0.3, h: 0.1 },
            r: 2.0,
            ranks: (1..=6).map(|i| 200 * i).collect(),
            basis: LowRankBasis::Exact,
            full: true,
            reps: 1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Protocol {
    SparseC(SparseCConfig),
    LowRankB(LowRankBConfig),
}

impl Protocol {
    /// `sparse-C` or `lowrank-B` with default settings.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "sparse-C" | "sparse-c" => Ok(Self::SparseC(SparseCConfig::default())),
            "lowrank-B" | "lowrank-b" => Ok(Self::LowRankB(LowRankBConfig::default())),
            other => Err(Error::Input(format!("unknown protocol {other:?}; expected sparse-C or lowrank-B"))),
        }
    }
}

/// `raw` and `summary` depend only on the configuration; wall-clock figures
/// are kept apart in `timing`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub raw: Table,
    pub summary: Table,
    pub timing: Table,
}

pub fn replicate_experiment(protocol: &Protocol) -> Result<ExperimentOutput> {
    match protocol {
        Protocol::SparseC(c) => sparse_c(c),
        Protocol::LowRankB(c) => lowrank_b(c),
    }
}

fn f(x: f64) -> String {
    fmt_f64(x)
}

fn med(v: &[f64]) -> f64 {
    quartiles(v).1
}

fn quartiles(v: &[f64]) -> (f64, f64, f64) {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if s.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    s.sort_by(|a, b| a.total_cmp(b));
    (quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75))
}

struct SparseRun {
    cell: usize,
    rep: usize,
    est: [f64; 5],
    design_size: usize,
    flag: Option<String>,
    seconds: f64,
}

fn sparse_c(c: &SparseCConfig) -> Result<ExperimentOutput> {
    if c.reps == 0 {
        return Err(Error::Input("reps must be at least 1".into()));
    }
    if c.g_values.is_empty() || c.h_values.is_empty() {
        return Err(Error::Input("empty (g, h) design".into()));
    }
    let cells: Vec<TghParams<f64>> = c
        .h_values
        .iter()
        .flat_map(|&h| c.g_values.iter().map(move |&g| (g, h)))
        .map(|(g, h)| TghParams::new(c.a, c.b, g, h))
        .collect::<Result<_>>()?;
    let grid = GridSpec::<f64>::unit(c.side)?;
    let sites = grid.sites();
    let kernel = ExpKernelParams::correlation(c.r, 0.0)?;
    let sampler = GaussianSampler::new(&sites, &kernel, SamplerKind::Auto)?;
    let center = grid.center_index();
    let s0 = sites[center];
    // the design depends only on geometry and the starting range
    let design = greedy_local_design(&sites, &kernel, (s0.x, s0.y), Some(center), &DesignOptions::filled(c.budget))?;

    // common random numbers: replication k uses stream k in every cell
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|i| (0..c.reps).map(move |k| (i, k))).collect();
    let runs: Vec<SparseRun> = jobs
        .par_iter()
        .map(|&(cell, rep)| {
            let t0 = Instant::now();
            let z = sampler.sample(&mut rep_rng(c.seed, rep as u64));
            let out = SpatialData::new(sites.clone(), apply_tgh(&z, &cells[cell]))
                .and_then(|d| fit_local_tgh(&d, center, &design.ids, c.r, None, &c.local));
            let (est, flag) = match out {
                Ok(fit) => {
                    let p = fit.local;
                    ([p.a, p.b, p.g, p.h, fit.lengthscale], fit.flag)
                }
                Err(e) => ([f64::NAN; 5], Some(e.to_string())),
            };
            SparseRun { cell, rep, est, design_size: design.ids.len(), flag, seconds: t0.elapsed().as_secs_f64() }
        })
        .collect();

    let mut raw = Table::new(&["g_true", "h_true", "rep", "a", "b", "g", "h", "r", "design_size", "flag"]);
    for r in &runs {
        let p = cells[r.cell];
        let mut row = vec![f(p.g), f(p.h), r.rep.to_string()];
        row.extend(r.est.iter().map(|&v| f(v)));
        row.push(r.design_size.to_string());
        row.push(r.flag.clone().unwrap_or_default());
        raw.push(row);
    }

    let mut summary = Table::new(&[
        "g_true", "h_true", "reps", "failed", "a_med", "b_med", "g_q1", "g_med", "g_q3", "h_q1", "h_med", "h_q3", "r_med",
        "g_sign_rate", "g_abs_err_med",
    ]);
    let mut timing = Table::new(&["g_true", "h_true", "reps", "seconds_total", "seconds_per_fit"]);
    for (i, p) in cells.iter().enumerate() {
        let ok: Vec<&SparseRun> = runs.iter().filter(|r| r.cell == i && r.flag.is_none()).collect();
        let col = |j: usize| -> Vec<f64> { ok.iter().map(|r| r.est[j]).collect() };
        let (g1, gm, g3) = quartiles(&col(2));
        let (h1, hm, h3) = quartiles(&col(3));
        // failed fits count as misses
        let sign = if p.g != 0.0 {
            ok.iter().filter(|r| r.est[2].signum() == p.g.signum() && r.est[2] != 0.0).count() as f64 / c.reps as f64
        } else {
            f64::NAN
        };
        let abs_err: Vec<f64> = col(2).iter().map(|g| (g - p.g).abs()).collect();
        summary.push(vec![
            f(p.g),
            f(p.h),
            c.reps.to_string(),
            (c.reps - ok.len()).to_string(),
            f(med(&col(0))),
            f(med(&col(1))),
            f(g1),
            f(gm),
            f(g3),
            f(h1),
            f(hm),
            f(h3),
            f(med(&col(4))),
            f(sign),
            f(med(&abs_err)),
        ]);
        let secs: f64 = runs.iter().filter(|r| r.cell == i).map(|r| r.seconds).sum();
        timing.push(vec![f(p.g), f(p.h), c.reps.to_string(), format!("{secs:.3}"), format!("{:.4}", secs / c.reps as f64)]);
    }
    Ok(ExperimentOutput { raw, summary, timing })
}

struct LowRankRun {
    rep: usize,
    method: &'static str,
    rank: usize,
    params: [f64; 4],
    theta2: f64,
    loglik: f64,
    converged: bool,
    flag: Option<String>,
    basis_seconds: f64,
    fit_seconds: f64,
}

impl LowRankRun {
    fn failed(rep: usize, method: &'static str, rank: usize, e: Error, basis_seconds: f64, fit_seconds: f64) -> Self {
        Self {
            rep,
            method,
            rank,
            params: [f64::NAN; 4],
            theta2: f64::NAN,
            loglik: f64::NAN,
            converged: false,
            flag: Some(e.to_string()),
            basis_seconds,
            fit_seconds,
        }
    }
}

/// Uniform sites on a square of side √n, so the density is one site per unit area.
pub fn uniform_sites(n: usize, seed: u64) -> Result<SiteSet<f64>> {
    let side = (n as f64).sqrt();
    let mut rng = rep_rng(seed, u64::MAX);
    let coords: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen::<f64>() * side, rng.gen::<f64>() * side)).collect();
    SiteSet::from_coords(&coords)
}

fn lowrank_b(c: &LowRankBConfig) -> Result<ExperimentOutput> {
    if c.reps == 0 {
        return Err(Error::Input("reps must be at least 1".into()));
    }
    let mut ranks = c.ranks.clone();
    ranks.sort_unstable();
    ranks.dedup();
    if let Some(&bad) = ranks.iter().find(|&&l| l < 10 || l > c.n) {
        return Err(Error::Input(format!("rank {bad} outside 10..={}", c.n)));
    }
    c.truth.require_monotone()?;
    let sites = uniform_sites(c.n, c.seed)?;
    let kernel = ExpKernelParams::correlation(c.r, 0.0)?;
    let sampler = GaussianSampler::new(&sites, &kernel, SamplerKind::Auto)?;

    // shared exact basis, built once
    let (shared, shared_secs) = match c.basis {
        LowRankBasis::Exact if !ranks.is_empty() => {
            let t0 = Instant::now();
            let full = LowRankSpec::build(&sites, *ranks.last().unwrap(), BasisMethod::Exact)?;
            (Some(full), t0.elapsed().as_secs_f64())
        }
        _ => (None, 0.0),
    };

    let mut runs = Vec::new();
    for rep in 0..c.reps {
        let z = sampler.sample(&mut rep_rng(c.seed, rep as u64));
        let data = SpatialData::new(sites.clone(), apply_tgh(&z, &c.truth))?;
        if c.full {
            let t0 = Instant::now();
            let opts = FullFitOptions { intervals: false, ..Default::default() };
            runs.push(match fit_full(&data, None, &opts) {
                Ok(m) => LowRankRun {
                    rep,
                    method: "full",
                    rank: c.n,
                    params: [m.params.a, m.params.b, m.params.g, m.params.h],
                    theta2: m.kernel.r,
                    loglik: m.loglik,
                    converged: m.converged,
                    flag: None,
                    basis_seconds: 0.0,
                    fit_seconds: t0.elapsed().as_secs_f64(),
                },
                Err(e) => LowRankRun::failed(rep, "full", c.n, e, 0.0, t0.elapsed().as_secs_f64()),
            });
        }
        for &l in &ranks {
            let t0 = Instant::now();
            let spec = match (&shared, c.basis) {
                (Some(s), _) => s.basis.truncated(l).and_then(|b| LowRankSpec::from_basis(b, s.r)),
                (None, LowRankBasis::Nystrom { factor }) => LowRankSpec::build(
                    &sites,
                    l,
                    BasisMethod::Nystrom { landmarks: (factor.max(1) * l).min(c.n), seed: c.seed },
                ),
                (None, LowRankBasis::Exact) => unreachable!("exact basis is built up front"),
            };
            let basis_seconds = if shared.is_some() { shared_secs } else { t0.elapsed().as_secs_f64() };
            let spec = match spec {
                Ok(s) => s,
                Err(e) => {
                    runs.push(LowRankRun::failed(rep, "lowrank", l, e, basis_seconds, 0.0));
                    continue;
                }
            };
            let t1 = Instant::now();
            let opts = LowRankFitOptions { intervals: false, ..Default::default() };
            runs.push(match fit_lowrank(&data, &spec, None, &opts) {
                Ok(m) => LowRankRun {
                    rep,
                    method: "lowrank",
                    rank: l,
                    params: [m.params.a, m.params.b, m.params.g, m.params.h],
                    theta2: m.m,
                    loglik: m.loglik,
                    converged: m.converged,
                    flag: None,
                    basis_seconds,
                    fit_seconds: t1.elapsed().as_secs_f64(),
                },
                Err(e) => LowRankRun::failed(rep, "lowrank", l, e, basis_seconds, t1.elapsed().as_secs_f64()),
            });
        }
    }

    let mut raw = Table::new(&["rep", "method", "L", "a", "b", "g", "h", "theta2", "loglik", "converged", "flag"]);
    for r in &runs {
        let mut row = vec![r.rep.to_string(), r.method.to_string(), r.rank.to_string()];
        row.extend(r.params.iter().map(|&v| f(v)));
        row.extend([f(r.theta2), f(r.loglik), r.converged.to_string(), r.flag.clone().unwrap_or_default()]);
        raw.push(row);
    }

    let full_of = |rep: usize| runs.iter().find(|r| r.rep == rep && r.method == "full" && r.flag.is_none());
    let mut keys: Vec<(&'static str, usize)> = Vec::new();
    for r in &runs {
        if !keys.contains(&(r.method, r.rank)) {
            keys.push((r.method, r.rank));
        }
    }
    let mut summary = Table::new(&[
        "method", "L", "reps", "failed", "a_med", "b_med", "g_med", "h_med", "theta2_med", "abs_dg_med", "abs_dg_max",
        "abs_dh_med",
    ]);
    let mut timing = Table::new(&["method", "L", "reps", "basis_seconds", "fit_seconds", "total_seconds"]);
    for (method, rank) in keys {
        let group: Vec<&LowRankRun> = runs.iter().filter(|r| r.method == method && r.rank == rank).collect();
        let ok: Vec<&&LowRankRun> = group.iter().filter(|r| r.flag.is_none()).collect();
        let col = |j: usize| -> Vec<f64> { ok.iter().map(|r| r.params[j]).collect() };
        let diff = |j: usize| -> Vec<f64> {
            ok.iter().filter_map(|r| full_of(r.rep).map(|fr| (r.params[j] - fr.params[j]).abs())).collect()
        };
        let dg = diff(2);
        let dg_max = dg.iter().copied().fold(f64::NAN, f64::max);
        summary.push(vec![
            method.to_string(),
            rank.to_string(),
            group.len().to_string(),
            (group.len() - ok.len()).to_string(),
            f(med(&col(0))),
            f(med(&col(1))),
            f(med(&col(2))),
            f(med(&col(3))),
            f(med(&ok.iter().map(|r| r.theta2).collect::<Vec<_>>())),
            f(med(&dg)),
            f(dg_max),
            f(med(&diff(3))),
        ]);
        let k = group.len() as f64;
        let bs = group.iter().map(|r| r.basis_seconds).sum::<f64>() / k;
        let fs = group.iter().map(|r| r.fit_seconds).sum::<f64>() / k;
        // a shared basis is paid once, not per rank
        let total = if shared.is_some() { fs } else { bs + fs };
        timing.push(vec![
            method.to_string(),
            rank.to_string(),
            group.len().to_string(),
            format!("{bs:.3}"),
            format!("{fs:.3}"),
            format!("{total:.3}"),
        ]);
    }
    Ok(ExperimentOutput { raw, summary, timing })
}

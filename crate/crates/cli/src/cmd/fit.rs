use std::collections::HashMap;

use log::info;
use tghrf::field::mst_max_edge;
use tghrf::full::{fit_full, FullFitOptions};
use tghrf::io::Table;
use tghrf::kernels::EigenBasis;
use tghrf::lowrank::{fit_lowrank, BasisMethod, LowRankFitOptions, LowRankSpec};
use tghrf::rf::{Intervals, SpatialData};
use tghrf::sparse::{fit_sparse_field, DesignOptions, LocalFitOptions, SparseOptions};
use tghrf::{Error, Result, TghParams};

use super::{f, fs};
use crate::config::Provenance;
use crate::data::{key, load_days, spatial, Days};
use crate::{BasisKind, FitArgs, FitMode};

const CI_COLS: [&str; 8] = [
    "ci_low_a", "ci_low_b", "ci_low_g", "ci_low_h", "ci_high_a", "ci_high_b", "ci_high_g", "ci_high_h",
];

fn header(lead: &[&str]) -> Table {
    let mut h: Vec<&str> = lead.to_vec();
    h.extend(CI_COLS);
    Table::new(&h)
}

fn param_cells(p: &TghParams) -> Vec<String> {
    fs(&[p.a, p.b, p.g, p.h])
}

fn ci_cells(i: &Intervals) -> Vec<String> {
    let mut v = fs(&i.low);
    v.extend(fs(&i.high));
    v
}

pub fn run(a: &FitArgs, seed: u64, prov: &Provenance) -> Result<()> {
    match a.mode {
        FitMode::Full => full(a, prov),
        FitMode::Lowrank => lowrank(a, seed, prov),
        FitMode::Sparse => sparse(a, prov),
    }
}

fn spatial_days(days: &Days) -> Result<Vec<(i64, SpatialData)>> {
    days.iter().map(|(&t, obs)| Ok((t, spatial(obs)?))).collect()
}

fn full(a: &FitArgs, prov: &Provenance) -> Result<()> {
    let days = spatial_days(&load_days(&a.input, a.pool_adjacent_days, a.day)?)?;
    let opts = FullFitOptions { intervals: !a.no_intervals, ..Default::default() };
    let mut out = header(&["day", "a", "b", "g", "h", "tau2", "sigma2", "r", "loglik"]);
    let mut diag = Table::new(&["day", "n", "loglik", "iterations", "converged"]);
    for (t, d) in &days {
        let m = fit_full(d, None, &opts)?;
        info!("day {t}: loglik {:.3} after {} iterations", m.loglik, m.iterations);
        let mut row = vec![t.to_string()];
        row.extend(param_cells(&m.params));
        row.extend(fs(&[m.kernel.tau2, m.kernel.sigma2, m.kernel.r, m.loglik]));
        row.extend(ci_cells(&m.intervals));
        out.push(row);
        diag.push(vec![
            t.to_string(),
            d.len().to_string(),
            f(m.loglik),
            m.iterations.to_string(),
            m.converged.to_string(),
        ]);
    }
    prov.write(&a.out, &out)?;
    if let Some(p) = &a.out_diagnostics {
        prov.write(p, &diag)?;
    }
    Ok(())
}

fn site_key(d: &SpatialData) -> Vec<(u64, u64)> {
    d.sites.iter().map(|s| key(s.x, s.y)).collect()
}

fn build_spec(a: &FitArgs, d: &SpatialData, seed: u64) -> Result<LowRankSpec> {
    let n = d.len();
    let rank = a.rank.unwrap_or(200.min(n));
    if let Some(stem) = &a.basis_file {
        let values = stem.with_file_name(format!(
            "{}.values.csv",
            stem.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
        ));
        if values.exists() {
            let b = EigenBasis::load(stem)?;
            if b.n() != n {
                return Err(Error::Input(format!("basis file has {} sites, data has {n}", b.n())));
            }
            let b = if b.rank() > rank { b.truncated(rank)? } else { b };
            info!("loaded basis of rank {} from {}", b.rank(), stem.display());
            return LowRankSpec::from_basis(b, mst_max_edge(&d.sites)?);
        }
    }
    let method = match a.basis {
        BasisKind::Exact => BasisMethod::Exact,
        BasisKind::Nystrom => BasisMethod::Nystrom { landmarks: a.landmarks.unwrap_or(2 * rank), seed },
    };
    let spec = LowRankSpec::build(&d.sites, rank, method)?;
    if let Some(stem) = &a.basis_file {
        spec.basis.save(stem)?;
    }
    Ok(spec)
}

fn lowrank(a: &FitArgs, seed: u64, prov: &Provenance) -> Result<()> {
    let days = spatial_days(&load_days(&a.input, a.pool_adjacent_days, a.day)?)?;
    let mut specs: HashMap<Vec<(u64, u64)>, LowRankSpec> = HashMap::new();
    if a.basis_file.is_some() {
        let distinct: std::collections::HashSet<_> = days.iter().map(|(_, d)| site_key(d)).collect();
        if distinct.len() > 1 {
            return Err(Error::Input("--basis-file needs every day to observe the same sites".into()));
        }
    }
    let opts = LowRankFitOptions { intervals: !a.no_intervals, ..Default::default() };
    let mut out = header(&["day", "a", "b", "g", "h"]);
    let mut diag = Table::new(&["day", "m", "r", "rank", "loglik", "iterations", "converged"]);
    for (t, d) in &days {
        let k = site_key(d);
        if !specs.contains_key(&k) {
            let spec = build_spec(a, d, seed)?;
            specs.insert(k.clone(), spec);
        }
        let spec = &specs[&k];
        let m = fit_lowrank(d, spec, None, &opts)?;
        info!("day {t}: m {:.3}, loglik {:.3}", m.m, m.loglik);
        let mut row = vec![t.to_string()];
        row.extend(param_cells(&m.params));
        row.extend(ci_cells(&m.intervals));
        out.push(row);
        diag.push(vec![
            t.to_string(),
            f(m.m),
            f(m.r),
            m.rank.to_string(),
            f(m.loglik),
            m.iterations.to_string(),
            m.converged.to_string(),
        ]);
    }
    prov.write(&a.out, &out)?;
    if let Some(p) = &a.out_diagnostics {
        prov.write(p, &diag)?;
    }
    Ok(())
}

#[derive(Default)]
struct SiteAcc {
    x: f64,
    y: f64,
    sums: [f64; 5],
    design: usize,
    ok: usize,
    fits: usize,
    flag: Option<String>,
}

fn sparse(a: &FitArgs, prov: &Provenance) -> Result<()> {
    let days = load_days(&a.input, a.pool_adjacent_days, None)?;
    let chosen: Vec<i64> = match (a.every, a.day) {
        (Some(0), _) => return Err(Error::Input("--every must be at least 1".into())),
        (Some(_), Some(_)) => return Err(Error::Input("--every and --day are exclusive".into())),
        (Some(k), None) => days.keys().copied().step_by(k).collect(),
        (None, Some(t)) => {
            if !days.contains_key(&t) {
                return Err(Error::Input(format!("day {t} not found in {}", a.input.display())));
            }
            vec![t]
        }
        (None, None) => days.keys().copied().take(1).collect(),
    };
    let opts = SparseOptions {
        design: DesignOptions { pool: a.pool, ..DesignOptions::filled(a.budget) },
        local: LocalFitOptions { nugget: a.nugget, ..Default::default() },
        smooth: a.smooth,
        no_refine: a.no_refine,
        targets: None,
        r0: a.r0,
        bandwidth: a.bandwidth,
    };

    let mut order = Vec::new();
    let mut acc: HashMap<(u64, u64), SiteAcc> = HashMap::new();
    for t in &chosen {
        let d = spatial(&days[t])?;
        let field = fit_sparse_field(&d, &opts)?;
        info!("day {t}: {} sites, {} failed, r0 {:.3}", field.fits.len(), field.failed, field.r0);
        for fit in &field.fits {
            let k = key(fit.x, fit.y);
            let e = acc.entry(k).or_insert_with(|| {
                order.push(k);
                SiteAcc { x: fit.x, y: fit.y, ..Default::default() }
            });
            e.fits += 1;
            e.design += fit.design_size;
            match &fit.flag {
                None => {
                    let p = &fit.params;
                    for (s, v) in e.sums.iter_mut().zip([p.a, p.b, p.g, p.h, fit.lengthscale]) {
                        *s += v;
                    }
                    e.ok += 1;
                }
                Some(m) => e.flag = Some(m.clone()),
            }
        }
    }
    // a site is flagged only when no day gave a usable fit
    let mut out = Table::new(&["x", "y", "a", "b", "g", "h", "r", "design_size", "flag"]);
    for k in &order {
        let e = &acc[k];
        let vals: Vec<f64> = e.sums.iter().map(|s| if e.ok > 0 { s / e.ok as f64 } else { f64::NAN }).collect();
        let mut row = vec![f(e.x), f(e.y)];
        row.extend(fs(&vals));
        row.push((e.design / e.fits).to_string());
        row.push(if e.ok > 0 { String::new() } else { e.flag.clone().unwrap_or_default() });
        out.push(row);
    }
    prov.write(&a.out, &out)
}

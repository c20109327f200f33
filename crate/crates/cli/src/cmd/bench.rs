use std::path::Path;

use log::info;
use tghrf::io::Table;
use tghrf::simgen::{replicate_experiment, LowRankBConfig, LowRankBasis, Protocol, SparseCConfig};
use tghrf::{Error, Result};

use crate::config::Provenance;
use crate::{BasisKind, BenchArgs, BenchProtocol};

fn protocol(a: &BenchArgs, seed: u64) -> Result<Protocol> {
    if a.reps == Some(0) {
        return Err(Error::Input("--reps must be at least 1".into()));
    }
    let sparse_only = a.side.is_some() || a.budget.is_some() || a.g_values.is_some() || a.h_values.is_some();
    let lowrank_only = a.n.is_some() || a.ranks.is_some() || a.basis.is_some() || a.no_full;
    Ok(match a.protocol {
        BenchProtocol::SparseC => {
            if lowrank_only {
                return Err(Error::Input("--n, --ranks, --basis and --no-full apply to lowrank-B".into()));
            }
            let d = SparseCConfig::default();
            Protocol::SparseC(SparseCConfig {
                side: a.side.unwrap_or(d.side),
                budget: a.budget.unwrap_or(d.budget),
                g_values: a.g_values.clone().map_or(d.g_values, |v| v.0),
                h_values: a.h_values.clone().map_or(d.h_values, |v| v.0),
                reps: a.reps.unwrap_or(d.reps),
                seed,
                ..d
            })
        }
        BenchProtocol::LowRankB => {
            if sparse_only {
                return Err(Error::Input("--side, --budget, --g-values and --h-values apply to sparse-C".into()));
            }
            let d = LowRankBConfig::default();
            Protocol::LowRankB(LowRankBConfig {
                n: a.n.unwrap_or(d.n),
                ranks: a.ranks.clone().map_or(d.ranks, |v| v.0),
                basis: match a.basis {
                    None | Some(BasisKind::Exact) => LowRankBasis::Exact,
                    Some(BasisKind::Nystrom) => LowRankBasis::Nystrom { factor: a.landmark_factor },
                },
                full: !a.no_full,
                reps: a.reps.unwrap_or(d.reps),
                seed,
                ..d
            })
        }
    })
}

fn write(prov: &Provenance, dir: &Path, name: &str, t: &Table) -> Result<()> {
    prov.write(&dir.join(name), t)
}

pub fn run(a: &BenchArgs, seed: u64, prov: &Provenance) -> Result<()> {
    let p = protocol(a, seed)?;
    info!("running {p:?}");
    let out = replicate_experiment(&p)?;
    write(prov, &a.out_dir, "raw.csv", &out.raw)?;
    write(prov, &a.out_dir, "summary.csv", &out.summary)?;
    write(prov, &a.out_dir, "timing.csv", &out.timing)
}

use log::warn;
use nalgebra::DMatrix;
use tghrf::clustering::{kmeans, select_k, separation_d, standardize, KMeansOptions, SpatialOrder};
use tghrf::io::{read_columns, Table};
use tghrf::{Error, Result};

use super::f;
use crate::config::Provenance;
use crate::ClusterArgs;

fn names(list: &str) -> Vec<String> {
    list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

fn matrix(rows: &[&Vec<f64>], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| rows[i][cols[j]])
}

pub fn run(a: &ClusterArgs, seed: u64, prov: &Provenance) -> Result<()> {
    let feat = names(&a.features);
    let cmp = a.compare_features.as_deref().map(names);
    if feat.is_empty() || cmp.as_ref().is_some_and(|c| c.is_empty()) {
        return Err(Error::Input("empty feature list".into()));
    }
    // x, y, the features, then the comparison features
    let mut wanted: Vec<&str> = vec!["x", "y"];
    wanted.extend(feat.iter().map(String::as_str));
    wanted.extend(cmp.iter().flatten().map(String::as_str));
    let rows = read_columns(&a.input, &wanted)?;
    let (ix, iy) = (0, 1);
    let fcols: Vec<usize> = (2..2 + feat.len()).collect();
    let ccols: Vec<usize> = (2 + feat.len()..wanted.len()).collect();

    // cells with a missing feature (failed fits) are left out
    let used: Vec<&Vec<f64>> = rows.iter().filter(|r| r.iter().all(|v| v.is_finite())).collect();
    if used.len() < rows.len() {
        warn!("{} of {} rows have missing values and are skipped", rows.len() - used.len(), rows.len());
    }
    if used.is_empty() {
        return Err(Error::Input(format!("{} has no complete rows", a.input.display())));
    }
    let coords: Vec<(f64, f64)> = used.iter().map(|r| (r[ix], r[iy])).collect();
    let reference = a.reference.unwrap_or_else(|| {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &coords {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        ((x0 + x1) / 2.0, (y0 + y1) / 2.0)
    });
    let opts = KMeansOptions {
        restarts: a.restarts,
        order: Some(SpatialOrder { coords: coords.clone(), reference }),
        ..Default::default()
    };
    let x = standardize(&matrix(&used, &fcols), &feat)?;

    if let Some(ks) = &a.select_k {
        let t = select_k(&x, &ks.0, seed, &opts)?;
        let mut out = Table::new(&["k", "aic", "bic", "inertia"]);
        for r in &t.rows {
            out.push(vec![r.k.to_string(), f(r.aic), f(r.bic), f(r.inertia)]);
        }
        prov.write(&a.out, &out)?;
        println!("best_aic {}", t.best_aic);
        println!("best_bic {}", t.best_bic);
        println!("elbow {}", t.elbow);
        return Ok(());
    }

    let k = a.k.expect("clap requires --k without --select-k");
    let res = kmeans(&x, k, seed, &opts)?;
    let mut out = Table::new(&["x", "y", "label"]);
    for ((cx, cy), l) in coords.iter().zip(&res.labels) {
        out.push(vec![f(*cx), f(*cy), l.to_string()]);
    }
    prov.write(&a.out, &out)?;
    println!("D[{}] {}", feat.join(","), f(separation_d(&res.labels, &x)?));
    if let Some(c) = &cmp {
        // the comparison partition is scored in the primary feature space
        let xc = standardize(&matrix(&used, &ccols), c)?;
        let rc = kmeans(&xc, k, seed, &opts)?;
        println!("D[{}] {}", c.join(","), f(separation_d(&rc.labels, &x)?));
    }
    Ok(())
}

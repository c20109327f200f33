//! Standardization, k-means over per-cell feature vectors, the separation
//! metric D and AIC/BIC tables for choosing the cluster count.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::simgen::rep_rng;

/// Column-wise z-scores (population standard deviation).
pub fn standardize(features: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::Input(format!("need at least two rows to standardize, got {n}")));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("features contain non-finite values".into()));
    }
    let mut out = features.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let mean = col.mean();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if !(sd > 1e-12 * mean.abs().max(1e-300)) {
            let name = names.get(j).cloned().unwrap_or_else(|| format!("column {j}"));
            return Err(Error::Input(format!("feature {name} is constant")));
        }
        col.apply(|v| *v = (*v - mean) / sd);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub k: usize,
    /// 1-based cluster id per row.
    pub labels: Vec<usize>,
    /// `k × d`, row `c − 1` is cluster `c`.
    pub centers: DMatrix<f64>,
    pub inertia: f64,
    pub aic: f64,
    pub bic: f64,
    pub iterations: usize,
}

/// Label order: clusters numbered by distance of their members' mean site
/// from `reference`.
#[derive(Debug, Clone)]
pub struct SpatialOrder {
    pub coords: Vec<(f64, f64)>,
    pub reference: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
    /// Without it clusters are ordered by their first center coordinate.
    pub order: Option<SpatialOrder>,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { restarts: 20, max_iter: 300, order: None }
    }
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, j: usize) -> f64 {
    x.row(i).iter().zip(c.row(j).iter()).map(|(a, b)| (a - b).powi(2)).sum()
}

fn nearest(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..c.nrows() {
        let d = sq_dist(x, i, c, j);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(x: &DMatrix<f64>, k: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let n = x.nrows();
    let mut c = DMatrix::zeros(k, x.ncols());
    let first = rng.gen_range(0..n);
    c.set_row(0, &x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &c, 0)).collect();
    for m in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc >= u && *d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        c.set_row(m, &x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x, i, &c, m));
        }
    }
    c
}

struct Run {
    labels: Vec<usize>,
    centers: DMatrix<f64>,
    inertia: f64,
    iterations: usize,
}

fn lloyd(x: &DMatrix<f64>, mut centers: DMatrix<f64>, max_iter: usize) -> Run {
    let (n, d) = x.shape();
    let k = centers.nrows();
    let mut labels = vec![usize::MAX; n];
    let mut prev_inertia = f64::INFINITY;
    let mut iterations = 0;
    loop {
        let mut changed = false;
        let mut dist = vec![0.0; n];
        for i in 0..n {
            let (j, dd) = nearest(x, i, &centers);
            dist[i] = dd;
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
        }
        let inertia: f64 = dist.iter().sum();
        debug_assert!(inertia <= prev_inertia * (1.0 + 1e-12) + 1e-12, "inertia rose: {prev_inertia} -> {inertia}");
        prev_inertia = inertia;
        if !changed || iterations >= max_iter {
            return Run { labels, centers, inertia, iterations };
        }
        iterations += 1;
        let mut sums = DMatrix::<f64>::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for c in 0..d {
                sums[(labels[i], c)] += x[(i, c)];
            }
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                for c in 0..d {
                    centers[(j, c)] = sums[(j, c)] / counts[j] as f64;
                }
            } else {
                // reseed from the point farthest from its centre
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                taken[far] = true;
                centers.set_row(j, &x.row(far));
                dist[far] = 0.0;
                // the reseed can raise inertia before the next assignment
                prev_inertia = f64::INFINITY;
            }
        }
    }
}

/// AIC and BIC of a k-means solution read as a mixture of spherical
/// Gaussians with one shared variance `inertia / (n d)` and weights `n_c / n`,
/// evaluated at the hard assignment. Parameters: `k d` means, `k − 1`
/// weights, one variance.
pub fn information_criteria(inertia: f64, sizes: &[usize], d: usize) -> (f64, f64) {
    let n: usize = sizes.iter().sum();
    let k = sizes.len();
    let nd = (n * d) as f64;
    let var = (inertia / nd).max(1e-300);
    let mut ll = -0.5 * nd * (1.0 + (2.0 * std::f64::consts::PI * var).ln());
    ll += sizes
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 * (c as f64 / n as f64).ln())
        .sum::<f64>();
    let p = (k * d + k) as f64;
    (-2.0 * ll + 2.0 * p, -2.0 * ll + p * (n as f64).ln())
}

fn sizes(labels: &[usize], k: usize) -> Vec<usize> {
    let mut s = vec![0; k];
    for &l in labels {
        s[l] += 1;
    }
    s
}

/// Sorts clusters and rewrites labels as 1..=k.
fn relabel(x: &DMatrix<f64>, run: Run, order: Option<&SpatialOrder>) -> (Vec<usize>, DMatrix<f64>) {
    let k = run.centers.nrows();
    let key: Vec<f64> = match order {
        Some(o) => {
            let mut sx = vec![0.0; k];
            let mut sy = vec![0.0; k];
            let mut cnt = vec![0usize; k];
            for (i, &l) in run.labels.iter().enumerate() {
                sx[l] += o.coords[i].0;
                sy[l] += o.coords[i].1;
                cnt[l] += 1;
            }
            (0..k)
                .map(|j| {
                    let c = cnt[j].max(1) as f64;
                    (sx[j] / c - o.reference.0).hypot(sy[j] / c - o.reference.1)
                })
                .collect()
        }
        None => (0..k).map(|j| run.centers[(j, 0)]).collect(),
    };
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(a.cmp(&b)));
    let mut rank = vec![0; k];
    for (r, &j) in idx.iter().enumerate() {
        rank[j] = r;
    }
    let mut centers = DMatrix::zeros(k, x.ncols());
    for (r, &j) in idx.iter().enumerate() {
        centers.set_row(r, &run.centers.row(j));
    }
    (run.labels.iter().map(|&l| rank[l] + 1).collect(), centers)
}

/// Lloyd's algorithm from k-means++ starts; the restart with the lowest
/// inertia wins. Restart `i` draws from stream `i` of `seed`, so the result
/// does not depend on the thread count.
pub fn kmeans(features: &DMatrix<f64>, k: usize, seed: u64, opts: &KMeansOptions) -> Result<ClusterResult> {
    let (n, d) = features.shape();
    if k == 0 || k > n {
        return Err(Error::Input(format!("k = {k} outside 1..={n}")));
    }
    if d == 0 || features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("features must be finite with at least one column".into()));
    }
    if let Some(o) = &opts.order {
        if o.coords.len() != n {
            return Err(Error::Input(format!("{} coordinates for {n} rows", o.coords.len())));
        }
    }
    let restarts = opts.restarts.max(1);
    let runs: Vec<Run> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rep_rng(seed, r as u64);
            lloyd(features, plus_plus_init(features, k, &mut rng), opts.max_iter)
        })
        .collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("at least one restart");
    let (inertia, iterations) = (best.inertia, best.iterations);
    let (aic, bic) = information_criteria(inertia, &sizes(&best.labels, k), d);
    let (labels, centers) = relabel(features, best, opts.order.as_ref());
    Ok(ClusterResult { k, labels, centers, inertia, aic, bic, iterations })
}

/// `D = (1/k²) Σ_C Σ_C' B(C, C') / W(C)`: `B` is the mean distance over pairs
/// drawn from C × C' and `W(C) = |C|⁻² Σ_{i,j∈C} ‖m_i − m_j‖` the within-cluster
/// mean (self pairs included). Labels are 1-based.
pub fn separation_d(labels: &[usize], features: &DMatrix<f64>) -> Result<f64> {
    let n = features.nrows();
    if labels.len() != n {
        return Err(Error::Input(format!("{} labels for {n} rows", labels.len())));
    }
    let k = labels.iter().copied().max().unwrap_or(0);
    if k == 0 || labels.iter().any(|&l| l == 0) {
        return Err(Error::Input("labels must be 1-based".into()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l - 1].push(i);
    }
    if let Some(c) = members.iter().position(|m| m.is_empty()) {
        return Err(Error::Metric(format!("cluster {} is empty", c + 1)));
    }
    let dist = |i: usize, j: usize| -> f64 {
        features.row(i).iter().zip(features.row(j).iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    let pair_mean = |a: &[usize], b: &[usize]| -> f64 {
        let s: f64 = a.iter().map(|&i| b.iter().map(|&j| dist(i, j)).sum::<f64>()).sum();
        s / (a.len() * b.len()) as f64
    };
    let table: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|c| (0..k).map(|c2| pair_mean(&members[c], &members[c2])).collect())
        .collect();
    let mut total = 0.0;
    for c in 0..k {
        let w = table[c][c];
        if !(w > 0.0) {
            return Err(Error::Metric(format!(
                "cluster {} has zero within-cluster distance ({} member(s))",
                c + 1,
                members[c].len()
            )));
        }
        total += table[c].iter().sum::<f64>() / w;
    }
    Ok(total / (k * k) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectKRow {
    pub k: usize,
    pub aic: f64,
    pub bic: f64,
    pub inertia: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectKTable {
    pub rows: Vec<SelectKRow>,
    pub best_aic: usize,
    pub best_bic: usize,
    /// k farthest below the chord joining the first and last inertia.
    pub elbow: usize,
}

/// k-means for each k in `ks`, with the same seed for every k. When the
/// restarts for k land above the k − 1 solution, k is refit from the k − 1
/// centres plus one extra start and the better run is kept.
pub fn select_k(features: &DMatrix<f64>, ks: &[usize], seed: u64, opts: &KMeansOptions) -> Result<SelectKTable> {
    let (n, d) = features.shape();
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(Error::Input("empty k range".into()));
    }
    if let Some(&bad) = ks.iter().find(|&&k| k < 2 || k + 1 > n) {
        return Err(Error::Input(format!("k = {bad} outside 2..={}", n.saturating_sub(1))));
    }
    let mut rows: Vec<SelectKRow> = Vec::with_capacity(ks.len());
    let mut prev: Option<ClusterResult> = None;
    for &k in &ks {
        let mut r = kmeans(features, k, seed, opts)?;
        if let Some(p) = prev.as_ref().filter(|p| r.inertia > p.inertia) {
            let warm = warm_start(features, p, k, seed, opts);
            if warm.inertia < r.inertia {
                let (aic, bic) = information_criteria(warm.inertia, &sizes(&warm.labels, k), d);
                r.inertia = warm.inertia;
                r.aic = aic;
                r.bic = bic;
            }
        }
        rows.push(SelectKRow { k, aic: r.aic, bic: r.bic, inertia: r.inertia });
        prev = Some(r);
    }
    let argmin = |f: fn(&SelectKRow) -> f64| {
        rows.iter().min_by(|a, b| f(a).total_cmp(&f(b))).map(|r| r.k).unwrap_or(ks[0])
    };
    let best_aic = argmin(|r| r.aic);
    let best_bic = argmin(|r| r.bic);
    let elbow = elbow_point(&rows);
    Ok(SelectKTable { rows, best_aic, best_bic, elbow })
}

/// Lloyd from the centres of a smaller solution topped up with random rows.
fn warm_start(features: &DMatrix<f64>, prev: &ClusterResult, k: usize, seed: u64, opts: &KMeansOptions) -> Run {
    let n = features.nrows();
    let mut rng = rep_rng(seed ^ 0x5eed, k as u64);
    (0..opts.restarts.max(1))
        .map(|_| {
            let mut c = DMatrix::zeros(k, features.ncols());
            for j in 0..prev.k.min(k) {
                c.set_row(j, &prev.centers.row(j));
            }
            for j in prev.k..k {
                c.set_row(j, &features.row(rng.gen_range(0..n)));
            }
            lloyd(features, c, opts.max_iter)
        })
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("at least one restart")
}

fn elbow_point(rows: &[SelectKRow]) -> usize {
    if rows.len() < 3 {
        return rows[0].k;
    }
    let (first, last) = (rows[0], rows[rows.len() - 1]);
    let span_k = (last.k - first.k) as f64;
    let span_i = (first.inertia - last.inertia).max(1e-300);
    rows.iter()
        .map(|r| {
            let u = (r.k - first.k) as f64 / span_k;
            let v = (first.inertia - r.inertia) / span_i;
            (r.k, v - u)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
        .unwrap_or(first.k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn information_criteria_penalize_parameters() {
        // same inertia and equal weights: only the penalty and the
        // membership term differ
        let (a1, b1) = information_criteria(10.0, &[50, 50], 2);
        let (a2, b2) = information_criteria(10.0, &[50, 25, 25], 2);
        let split = 2.0 * 50.0 * 2f64.ln();
        assert!((a2 - a1 - 6.0 - split).abs() < 1e-9);
        assert!((b2 - b1 - 3.0 * 100f64.ln() - split).abs() < 1e-9);
    }

    #[test]
    fn relabel_orders_by_reference_distance() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 0.1, 5.0, 5.1]);
        let run = Run {
            labels: vec![0, 0, 1, 1],
            centers: DMatrix::from_row_slice(2, 1, &[0.05, 5.05]),
            inertia: 0.0,
            iterations: 0,
        };
        let order = SpatialOrder {
            coords: vec![(10.0, 0.0), (10.0, 1.0), (0.0, 0.0), (1.0, 0.0)],
            reference: (0.0, 0.0),
        };
        let (labels, centers) = relabel(&x, run, Some(&order));
        assert_eq!(labels, vec![2, 2, 1, 1]);
        assert_eq!(centers[(0, 0)], 5.05);
    }
}

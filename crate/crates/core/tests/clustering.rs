use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tghrf::clustering::{kmeans, select_k, separation_d, standardize, KMeansOptions, SpatialOrder};
use tghrf::Error;

/// `k` blobs of `per` points in `d` dimensions, centres on a scaled simplex-like
/// layout at least `gap` apart, unit-free spread `sd`.
fn blobs(k: usize, per: usize, d: usize, gap: f64, sd: f64, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sd).unwrap();
    let mut centres: Vec<Vec<f64>> = Vec::new();
    while centres.len() < k {
        let c: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * gap * 3.0).collect();
        let ok = centres
            .iter()
            .all(|o| o.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= gap);
        if ok {
            centres.push(c);
        }
    }
    let mut x = DMatrix::zeros(k * per, d);
    let mut truth = Vec::new();
    for (b, c) in centres.iter().enumerate() {
        for p in 0..per {
            for j in 0..d {
                x[(b * per + p, j)] = c[j] + noise.sample(&mut rng);
            }
            truth.push(b);
        }
    }
    (x, truth)
}

/// Same partition up to a renaming of the clusters.
fn same_partition(a: &[usize], b: &[usize]) -> bool {
    use std::collections::HashMap;
    let mut ab = HashMap::new();
    let mut ba = HashMap::new();
    a.iter().zip(b).all(|(x, y)| *ab.entry(x).or_insert(y) == y && *ba.entry(y).or_insert(x) == x)
}

fn total_ss(x: &DMatrix<f64>) -> f64 {
    x.column_iter().map(|c| {
        let m = c.mean();
        c.iter().map(|v| (v - m).powi(2)).sum::<f64>()
    }).sum()
}

#[test]
fn standardize_examples() {
    let names: Vec<String> = vec!["a".into(), "b".into()];
    let x = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
    let s = standardize(&x, &names).unwrap();
    assert!((s[(0, 0)] + 1.0).abs() < 1e-15 && (s[(1, 0)] - 1.0).abs() < 1e-15);

    let (b, _) = blobs(3, 20, 2, 5.0, 1.0, 1);
    let s1 = standardize(&b, &names).unwrap();
    let again = standardize(&s1, &names).unwrap();
    assert!((&again - &s1).abs().max() < 1e-12);
    let scaled = standardize(&(&b * 10.0), &names).unwrap();
    assert!((&scaled - &s1).abs().max() < 1e-12);
    for c in s1.column_iter() {
        assert!(c.mean().abs() < 1e-12);
        assert!(((c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64) - 1.0).abs() < 1e-12);
    }

    let mut bad = b.clone();
    bad.column_mut(1).fill(3.0);
    match standardize(&bad, &names) {
        Err(Error::Input(m)) => assert!(m.contains('b'), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn two_clouds_split_exactly() {
    let (x, truth) = blobs(2, 40, 3, 20.0, 0.5, 2);
    let r = kmeans(&x, 2, 7, &KMeansOptions::default()).unwrap();
    assert!(same_partition(&r.labels, &truth));
    let mut want = 0.0;
    for b in 0..2 {
        let rows: Vec<usize> = (0..80).filter(|&i| truth[i] == b).collect();
        want += total_ss(&x.select_rows(&rows));
    }
    assert!((r.inertia - want).abs() < 1e-9 * want);
    assert!(r.labels.iter().all(|&l| l == 1 || l == 2));
}

#[test]
fn k_one_and_k_n() {
    let (x, _) = blobs(3, 10, 4, 4.0, 1.0, 3);
    let r1 = kmeans(&x, 1, 0, &KMeansOptions::default()).unwrap();
    for j in 0..4 {
        assert!((r1.centers[(0, j)] - x.column(j).mean()).abs() < 1e-12);
    }
    assert!((r1.inertia - total_ss(&x)).abs() < 1e-9 * total_ss(&x));
    let rn = kmeans(&x, 30, 0, &KMeansOptions::default()).unwrap();
    assert!(rn.inertia.abs() < 1e-20);
    assert!(matches!(kmeans(&x, 31, 0, &KMeansOptions::default()), Err(Error::Input(_))));
}

#[test]
fn labels_follow_distance_from_reference() {
    // features mirror position, so clusters are spatial bands
    let coords: Vec<(f64, f64)> = (0..60).map(|i| ((i % 3) as f64 * 10.0, (i / 3) as f64 * 0.01)).collect();
    let x = DMatrix::from_fn(60, 1, |i, _| coords[i].0);
    let opts = KMeansOptions {
        order: Some(SpatialOrder { coords: coords.clone(), reference: (20.0, 0.0) }),
        ..Default::default()
    };
    let r = kmeans(&x, 3, 1, &opts).unwrap();
    for (i, c) in coords.iter().enumerate() {
        let want = match c.0 as i64 {
            20 => 1,
            10 => 2,
            _ => 3,
        };
        assert_eq!(r.labels[i], want);
    }
}

#[test]
fn separation_hand_example() {
    let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 10.0, 0.0, 11.0, 0.0]);
    // W = 0.5 for both, B = 10, so D = (21 + 21) / 4
    let d = separation_d(&[1, 1, 2, 2], &x).unwrap();
    assert!((d - 10.5).abs() < 1e-12, "{d}");
    assert_eq!(separation_d(&[2, 2, 1, 1], &x).unwrap(), d);
}

#[test]
fn separation_degenerate_cases() {
    let same = DMatrix::from_element(6, 2, 1.0);
    assert!(matches!(separation_d(&[1, 1, 1, 2, 2, 2], &same), Err(Error::Metric(_))));
    let x = DMatrix::from_fn(5, 2, |i, j| (i * 3 + j) as f64);
    match separation_d(&[1, 1, 2, 1, 1], &x) {
        Err(Error::Metric(m)) => assert!(m.contains("cluster 2"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn separation_invariances() {
    let (x, _) = blobs(4, 25, 2, 6.0, 1.0, 4);
    let r = kmeans(&x, 4, 4, &KMeansOptions::default()).unwrap();
    let d = separation_d(&r.labels, &x).unwrap();
    assert!(d > 1.0);
    let th: f64 = 0.7;
    let rot = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
    let xr = &x * rot.transpose();
    assert!((separation_d(&r.labels, &xr).unwrap() - d).abs() < 1e-10);
    let perm: Vec<usize> = r.labels.iter().map(|&l| [0, 3, 1, 4, 2][l]).collect();
    assert!((separation_d(&perm, &x).unwrap() - d).abs() < 1e-12);
    let (far, _) = blobs(2, 20, 2, 50.0, 0.5, 5);
    let rf = kmeans(&far, 2, 0, &KMeansOptions::default()).unwrap();
    assert!(separation_d(&rf.labels, &far).unwrap() > 10.0);
}

#[test]
fn select_k_table() {
    let (x, _) = blobs(5, 20, 3, 4.0, 1.0, 6);
    let t = select_k(&x, &(2..=9).collect::<Vec<_>>(), 3, &KMeansOptions::default()).unwrap();
    assert_eq!(t.rows.iter().map(|r| r.k).collect::<Vec<_>>(), (2..=9).collect::<Vec<_>>());
    for w in t.rows.windows(2) {
        assert!(w[1].inertia <= w[0].inertia, "{:?}", t.rows);
    }
    let one = select_k(&x, &[2], 3, &KMeansOptions::default()).unwrap();
    assert_eq!(one.rows.len(), 1);
    assert!(select_k(&x, &[1], 3, &KMeansOptions::default()).is_err());
}

#[test]
fn bic_picks_seven_blobs() {
    let mut hits = 0;
    for seed in 0..20 {
        let (x, _) = blobs(7, 30, 4, 8.0, 1.0, 100 + seed);
        let t = select_k(&x, &(3..=12).collect::<Vec<_>>(), seed, &KMeansOptions::default()).unwrap();
        if t.best_bic == 7 {
            hits += 1;
        }
    }
    assert!(hits >= 16, "{hits}/20");
}

#[test]
fn result_independent_of_thread_count() {
    let (x, _) = blobs(6, 30, 4, 3.0, 1.0, 8);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| kmeans(&x, 6, 11, &KMeansOptions::default()).unwrap())
    };
    assert_eq!(run(1), run(4));
}

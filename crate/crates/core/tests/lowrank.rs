#[path = "common/oracles.rs"]
mod oracles;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tghrf::field::{mst_max_edge, SiteSet};
use tghrf::full::tgh_rf_loglik;
use tghrf::kernels::ExpKernelParams;
use tghrf::lowrank::{fit_lowrank, lowrank_loglik, BasisMethod, LowRankFitOptions, LowRankSpec};
use tghrf::rf::SpatialData;
use tghrf::simgen::{apply_tgh, rep_rng, simulate_on_sites};
use tghrf::tgh::TghParams;

fn random_sites(n: usize, side: f64, seed: u64) -> SiteSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen_range(0.0..side), rng.gen_range(0.0..side))).collect();
    SiteSet::from_coords(&c).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

#[test]
fn full_rank_matches_full_loglik() {
    let sites = random_sites(50, 5.0, 1);
    let spec = LowRankSpec::build(&sites, 50, BasisMethod::Exact).unwrap();
    let r = mst_max_edge(&sites).unwrap();
    assert_eq!(spec.r, r);
    let y = simulate_on_sites(&sites, &TghParams::new(0.0, 1.0, 0.3, 0.1).unwrap(), &ExpKernelParams::correlation(1.0, 0.0).unwrap(), 2, 1).unwrap();
    let data = SpatialData::new(sites, y[0].clone()).unwrap();
    for p in [TghParams::new(0.1, 1.1, 0.3, 0.1).unwrap(), TghParams::new(-0.2, 0.8, -0.4, 0.25).unwrap()] {
        let lr = lowrank_loglik(&p, 1.0, &spec, &data).unwrap();
        let full = tgh_rf_loglik(&p, &ExpKernelParams::correlation(r, 0.0).unwrap(), &data).unwrap();
        assert!((lr - full).abs() < 1e-6, "{lr} vs {full}");
    }
}

#[test]
fn gaussian_case_matches_direct_density() {
    let sites = random_sites(60, 5.0, 3);
    let spec = LowRankSpec::build(&sites, 20, BasisMethod::Exact).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..2.0)).collect();
    let data = SpatialData::new(sites, y.clone()).unwrap();
    let m = 1.6;
    let cov = spec.corr(m).dense_with_residual();
    let direct = oracles::gaussian_loglik(&y, 0.3, 1.4, &cov);
    let ll = lowrank_loglik(&TghParams::gaussian(0.3, 1.4).unwrap(), m, &spec, &data).unwrap();
    assert!((ll - direct).abs() < 1e-8, "{ll} vs {direct}");
}

#[test]
fn more_eigenpairs_do_not_lower_the_optimum() {
    let sites = random_sites(200, 10.0, 5);
    let y = simulate_on_sites(&sites, &TghParams::new(0.0, 1.0, 0.3, 0.05).unwrap(), &ExpKernelParams::correlation(1.5, 0.05).unwrap(), 6, 1).unwrap();
    let data = SpatialData::new(sites.clone(), y[0].clone()).unwrap();
    let full = LowRankSpec::build(&sites, 50, BasisMethod::Exact).unwrap();
    let opts = LowRankFitOptions { intervals: false, ..Default::default() };
    let mut prev = f64::NEG_INFINITY;
    for l in [10, 20, 30, 40, 50] {
        let spec = LowRankSpec::from_basis(full.basis.truncated(l).unwrap(), full.r).unwrap();
        let fit = fit_lowrank(&data, &spec, None, &opts).unwrap();
        assert!(fit.loglik >= prev - 1e-3, "L={l}: {} after {prev}", fit.loglik);
        prev = fit.loglik;
    }
}

#[test]
fn recovers_g_from_its_own_model() {
    let sites = random_sites(300, 12.0, 7);
    let spec = LowRankSpec::build(&sites, 50, BasisMethod::Exact).unwrap();
    let truth = TghParams::new(0.0, 1.0, 0.3, 0.0).unwrap();
    let opts = LowRankFitOptions { intervals: false, ..Default::default() };
    let g: Vec<f64> = (0..20)
        .map(|rep| {
            let z = spec.sample_latent(2.0, &mut rep_rng(8, rep));
            let data = SpatialData::new(sites.clone(), apply_tgh(&z, &truth)).unwrap();
            fit_lowrank(&data, &spec, None, &opts).unwrap().params.g
        })
        .collect();
    let med = median(g.clone());
    assert!((med - 0.3).abs() < 0.2, "median g {med} from {g:?}");
}

#[test]
fn location_shift_leaves_m_unchanged() {
    let sites = random_sites(150, 8.0, 9);
    let spec = LowRankSpec::build(&sites, 30, BasisMethod::Exact).unwrap();
    let y = simulate_on_sites(&sites, &TghParams::new(1.0, 2.0, 0.2, 0.1).unwrap(), &ExpKernelParams::correlation(1.0, 0.1).unwrap(), 10, 1).unwrap();
    let opts = LowRankFitOptions { intervals: false, ..Default::default() };
    let a = fit_lowrank(&SpatialData::new(sites.clone(), y[0].clone()).unwrap(), &spec, None, &opts).unwrap();
    let b = fit_lowrank(&SpatialData::new(sites.clone(), y[0].iter().map(|v| v + 25.0).collect()).unwrap(), &spec, None, &opts).unwrap();
    assert!((b.params.a - a.params.a - 25.0).abs() < 1e-3 * a.params.b);
    assert!((b.m - a.m).abs() < 1e-3, "m {} vs {}", a.m, b.m);
    assert!((b.loglik - a.loglik).abs() < 1e-6);
}

#[test]
fn evaluation_cost_is_subquadratic() {
    let ns = [500usize, 1000, 2000, 4000];
    let p = TghParams::new(0.0, 1.0, 0.2, 0.1).unwrap();
    let mut secs = Vec::new();
    for (k, &n) in ns.iter().enumerate() {
        let side = (n as f64).sqrt();
        let sites = random_sites(n, side, 20 + k as u64);
        let spec = LowRankSpec::build(&sites, 50, BasisMethod::Nystrom { landmarks: 100, seed: 1 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let data = SpatialData::new(sites, y).unwrap();
        let reps = 40;
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let t = Instant::now();
            for i in 0..reps {
                std::hint::black_box(lowrank_loglik(&p, 1.0 + i as f64 * 1e-3, &spec, &data).unwrap());
            }
            best = best.min(t.elapsed().as_secs_f64() / reps as f64);
        }
        secs.push(best);
    }
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = secs.iter().map(|s| s.ln()).collect();
    let mx = xs.iter().sum::<f64>() / 4.0;
    let my = ys.iter().sum::<f64>() / 4.0;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!(slope < 1.5, "log-log slope {slope}, times {secs:?}");
}

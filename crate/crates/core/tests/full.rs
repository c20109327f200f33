#[path = "common/oracles.rs"]
mod oracles;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tghrf::field::SiteSet;
use tghrf::full::{fit_full, tgh_rf_loglik, FullFitOptions, TghRfModel};
use tghrf::kernels::ExpKernelParams;
use tghrf::rf::{Intervals, SpatialData};
use tghrf::simgen::simulate_on_sites;
use tghrf::tgh::{tau_gh_inv, TghParams};

fn random_coords(n: usize, side: f64, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (rng.gen_range(0.0..side), rng.gen_range(0.0..side))).collect()
}

fn data_from(coords: &[(f64, f64)], y: Vec<f64>) -> SpatialData {
    SpatialData::new(SiteSet::from_coords(coords).unwrap(), y).unwrap()
}

fn simulate(coords: &[(f64, f64)], p: TghParams<f64>, k: ExpKernelParams<f64>, seed: u64, reps: usize) -> Vec<SpatialData> {
    let sites = SiteSet::from_coords(coords).unwrap();
    simulate_on_sites(&sites, &p, &k, seed, reps)
        .unwrap()
        .into_iter()
        .map(|y| SpatialData::new(sites.clone(), y).unwrap())
        .collect()
}

#[test]
fn three_site_change_of_variables_oracle() {
    let coords = [(0.0, 0.0), (1.0, 0.5), (0.3, 1.7)];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let p = TghParams::new(rng.gen_range(-1.0..1.0), rng.gen_range(0.5..2.0), rng.gen_range(-0.8..0.8), rng.gen_range(0.0..0.5)).unwrap();
        let k = ExpKernelParams::new(rng.gen_range(0.5..1.5), rng.gen_range(0.0..0.5), rng.gen_range(0.3..3.0)).unwrap();
        let y: Vec<f64> = (0..3).map(|_| p.a + p.b * rng.gen_range(-2.0..2.0)).collect();
        // density of y: N(z; 0, C) · |det ∂z/∂y| with the Jacobian by central differences
        let zinv = |v: f64| tau_gh_inv((v - p.a) / p.b, p.g, p.h).unwrap();
        let z: Vec<f64> = y.iter().map(|&v| zinv(v)).collect();
        let c = oracles::exp_corr(&coords, k.r, 0.0) * k.tau2 + DMatrix::identity(3, 3) * k.sigma2;
        let c = DMatrix::from_fn(3, 3, |i, j| if i == j { k.tau2 + k.sigma2 } else { c[(i, j)] });
        let ln_norm = oracles::gaussian_loglik(&z, 0.0, 1.0, &c);
        let eps = 1e-5;
        let ln_jac: f64 = y
            .iter()
            .map(|&v| ((zinv(v + eps) - zinv(v - eps)) / (2.0 * eps)).ln())
            .sum();
        let oracle = ln_norm + ln_jac;
        let ll = tgh_rf_loglik(&p, &k, &data_from(&coords, y)).unwrap();
        assert!((ll - oracle).abs() < 1e-8, "{ll} vs {oracle}");
    }
}

#[test]
fn gaussian_reduction_matches_direct_density() {
    let coords = random_coords(30, 5.0, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y: Vec<f64> = (0..30).map(|_| rng.gen_range(-2.0..3.0)).collect();
    let (a, b) = (0.4, 1.7);
    let k = ExpKernelParams::correlation(1.3, 0.2).unwrap();
    let ll = tgh_rf_loglik(&TghParams::gaussian(a, b).unwrap(), &k, &data_from(&coords, y.clone())).unwrap();
    let c = oracles::exp_corr(&coords, 1.3, 0.2);
    let direct = oracles::gaussian_loglik(&y, a, b, &c);
    assert!((ll - direct).abs() < 1e-9, "{ll} vs {direct}");
}

#[test]
fn gaussian_fit_equals_direct_mle() {
    let coords = random_coords(50, 6.0, 3);
    let data = &simulate(&coords, TghParams::gaussian(1.0, 2.0).unwrap(), ExpKernelParams::correlation(1.5, 0.1).unwrap(), 4, 1)[0];
    let opts = FullFitOptions { freeze_gh: true, ..Default::default() };
    let fit = fit_full(data, None, &opts).unwrap();
    let maxd = data.sites.max_distance();
    let mle = oracles::gaussian_mle(&coords, &data.values, fit.kernel.r, fit.kernel.sigma2, 10.0 * maxd);
    assert!(fit.loglik >= mle.loglik - 1e-6, "{} vs {}", fit.loglik, mle.loglik);
    assert!((fit.loglik - mle.loglik).abs() < 1e-6);
    assert!((fit.params.a - mle.a).abs() < 1e-4, "a {} vs {}", fit.params.a, mle.a);
    assert!((fit.params.b - mle.b).abs() < 1e-4, "b {} vs {}", fit.params.b, mle.b);
    assert!((fit.kernel.r - mle.r).abs() < 1e-4, "r {} vs {}", fit.kernel.r, mle.r);
    assert!((fit.kernel.sigma2 - mle.nugget).abs() < 1e-4, "nugget {} vs {}", fit.kernel.sigma2, mle.nugget);
    assert_eq!((fit.params.g, fit.params.h), (0.0, 0.0));
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

#[test]
fn gaussian_data_gives_small_g_and_h() {
    let coords = random_coords(200, 12.0, 5);
    let sets = simulate(&coords, TghParams::gaussian(0.0, 1.0).unwrap(), ExpKernelParams::correlation(2.0, 0.1).unwrap(), 6, 20);
    let fits: Vec<TghRfModel> = sets.iter().map(|d| fit_full(d, None, &FullFitOptions { intervals: false, ..Default::default() }).unwrap()).collect();
    for f in &fits {
        assert!(f.history.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    }
    let g = median(fits.iter().map(|f| f.params.g.abs()).collect());
    let h = median(fits.iter().map(|f| f.params.h.abs()).collect());
    assert!(g < 0.15 && h < 0.1, "median |g| {g}, |h| {h}");
}

#[test]
fn skewed_data_recovers_g() {
    let coords = random_coords(400, 16.0, 7);
    let sets = simulate(&coords, TghParams::new(0.0, 1.0, 0.5, 0.0).unwrap(), ExpKernelParams::correlation(2.0, 0.1).unwrap(), 8, 20);
    let hits = sets
        .iter()
        .map(|d| fit_full(d, None, &FullFitOptions { intervals: false, ..Default::default() }).unwrap())
        .filter(|f| (0.2..=0.8).contains(&f.params.g))
        .count();
    assert!(hits >= 16, "{hits}/20 within [0.2, 0.8]");
}

#[test]
fn init_at_truth_converges_quickly() {
    // no nugget, no noise beyond the field itself
    let coords = random_coords(60, 6.0, 9);
    let truth = TghParams::new(0.5, 1.2, 0.3, 0.1).unwrap();
    let kernel = ExpKernelParams::correlation(1.5, 0.0).unwrap();
    let data = &simulate(&coords, truth, kernel, 10, 1)[0];
    let start = fit_full(data, None, &FullFitOptions::default()).unwrap();
    let again = fit_full(data, Some(&start), &FullFitOptions::default()).unwrap();
    assert!(again.iterations <= 3, "{} iterations", again.iterations);
    assert!(again.loglik >= start.loglik - 1e-9);
}

#[test]
fn affine_equivariance() {
    let coords = random_coords(80, 8.0, 11);
    let data = &simulate(&coords, TghParams::new(0.0, 1.0, 0.4, 0.1).unwrap(), ExpKernelParams::correlation(1.5, 0.1).unwrap(), 12, 1)[0];
    let moved = data_from(&coords, data.values.iter().map(|v| 3.0 * v - 7.0).collect());
    let opts = FullFitOptions { intervals: false, ..Default::default() };
    let p = fit_full(data, None, &opts).unwrap();
    let q = fit_full(&moved, None, &opts).unwrap();
    assert!((q.params.a - (3.0 * p.params.a - 7.0)).abs() < 1e-3 * q.params.b);
    assert!((q.params.b - 3.0 * p.params.b).abs() < 1e-3 * q.params.b);
    assert!((q.params.g - p.params.g).abs() < 1e-3);
    assert!((q.params.h - p.params.h).abs() < 1e-3);
    assert!((q.loglik - (p.loglik - 80.0 * 3f64.ln())).abs() < 1e-4);
}

#[test]
fn intervals_cover_estimates() {
    let coords = random_coords(100, 8.0, 13);
    let data = &simulate(&coords, TghParams::new(2.0, 1.0, 0.3, 0.1).unwrap(), ExpKernelParams::correlation(1.0, 0.1).unwrap(), 14, 1)[0];
    let fit = fit_full(data, None, &FullFitOptions::default()).unwrap();
    let Intervals { low, high } = fit.intervals;
    let est = [fit.params.a, fit.params.b, fit.params.g, fit.params.h];
    for k in 0..3 {
        assert!(low[k] < est[k] && est[k] < high[k], "{k}: {low:?} {est:?} {high:?}");
    }
}

#[test]
fn small_or_constant_inputs_rejected() {
    let coords = random_coords(10, 3.0, 15);
    assert!(matches!(fit_full(&data_from(&coords, vec![1.0; 10]), None, &FullFitOptions::default()), Err(tghrf::Error::Input(_))));
    let coords = random_coords(25, 3.0, 16);
    assert!(matches!(fit_full(&data_from(&coords, vec![1.0; 25]), None, &FullFitOptions::default()), Err(tghrf::Error::Fit(_))));
}

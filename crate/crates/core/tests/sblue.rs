use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tghrf::field::SiteSet;
use tghrf::kernels::{cov_matrix, exact_eigs, ExpKernelParams};
use tghrf::sblue::{boxcox_fit_transform, gls_fit};
use tghrf::simgen::{rep_rng, GaussianSampler, SamplerKind};
use tghrf::Error;

fn coords(n: usize, side: f64, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (rng.gen::<f64>() * side, rng.gen::<f64>() * side)).collect()
}

fn design(c: &[(f64, f64)]) -> DMatrix<f64> {
    DMatrix::from_fn(c.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => c[i].0,
        _ => (c[i].1 * 0.7).sin(),
    })
}

fn names(k: usize) -> Vec<String> {
    (0..k).map(|j| format!("c{j}")).collect()
}

/// Textbook GLS through an LU inverse.
fn gls_oracle(x: &DMatrix<f64>, y: &DVector<f64>, c: &DMatrix<f64>) -> DVector<f64> {
    let ci = c.clone().lu().try_inverse().unwrap();
    let a = x.transpose() * &ci * x;
    a.lu().try_inverse().unwrap() * x.transpose() * &ci * y
}

#[test]
fn identity_covariance_intercept_gives_mean() {
    // unit spacing and a tiny range make C the identity
    let c: Vec<(f64, f64)> = (0..30).map(|i| ((i % 6) as f64, (i / 6) as f64)).collect();
    let sites = SiteSet::from_coords(&c).unwrap();
    let k = ExpKernelParams::new(1.0, 0.0, 1e-3).unwrap();
    let y: Vec<f64> = (0..30).map(|i| ((i * 7) % 11) as f64 - 3.5).collect();
    let x = DMatrix::from_element(30, 1, 1.0);
    let m = gls_fit(&sites, &x, &names(1), &y, &k, None).unwrap();
    let mean = y.iter().sum::<f64>() / 30.0;
    assert!((m.z_hat[0] - mean).abs() < 1e-12);
}

#[test]
fn coefficients_match_dense_oracle() {
    let c = coords(80, 10.0, 3);
    let sites = SiteSet::from_coords(&c).unwrap();
    let k = ExpKernelParams::new(2.0, 0.3, 1.5).unwrap();
    let x = design(&c);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y: Vec<f64> = (0..80).map(|_| StandardNormal.sample(&mut rng)).collect();
    let m = gls_fit(&sites, &x, &names(3), &y, &k, None).unwrap();
    let want = gls_oracle(&x, &DVector::from_column_slice(&y), &cov_matrix(&sites, &k).unwrap());
    for j in 0..3 {
        assert!((m.z_hat[j] - want[j]).abs() < 1e-9 * (1.0 + want[j].abs()), "{j}");
    }
    assert!(m.t_values.iter().all(|t| t.is_finite()));
}

#[test]
fn full_rank_basis_matches_exact() {
    let c = coords(60, 8.0, 5);
    let sites = SiteSet::from_coords(&c).unwrap();
    let k = ExpKernelParams::new(1.0, 0.2, 2.0).unwrap();
    let x = design(&c);
    let y: Vec<f64> = c.iter().map(|p| p.0 - 0.5 * p.1 + (p.0 * p.1).cos()).collect();
    let basis = exact_eigs(&cov_matrix(&sites, &k).unwrap(), 60).unwrap();
    assert_eq!(basis.rank(), 60);
    let exact = gls_fit(&sites, &x, &names(3), &y, &k, None).unwrap();
    let reduced = gls_fit(&sites, &x, &names(3), &y, &k, Some(&basis)).unwrap();
    for j in 0..3 {
        let rel = (exact.z_hat[j] - reduced.z_hat[j]).abs() / exact.z_hat[j].abs().max(1e-12);
        assert!(rel < 1e-6, "coef {j}: {rel}");
    }
    for p in [(1.3f64, 2.2f64), (7.9, 0.4), (4.0, 4.0)] {
        let xs = [1.0, p.0, (p.1 * 0.7).sin()];
        let a = exact.predict(p, &xs).unwrap();
        let b = reduced.predict(p, &xs).unwrap();
        assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
    }
}

#[test]
fn duplicated_column_names_the_culprits() {
    let c = coords(40, 5.0, 6);
    let sites = SiteSet::from_coords(&c).unwrap();
    let k = ExpKernelParams::new(1.0, 0.1, 1.0).unwrap();
    let mut x = design(&c);
    x = x.insert_column(3, 0.0);
    for i in 0..40 {
        x[(i, 3)] = x[(i, 1)];
    }
    let nm = vec!["one".into(), "east".into(), "wave".into(), "east_copy".into()];
    let y: Vec<f64> = (0..40).map(|i| i as f64).collect();
    match gls_fit(&sites, &x, &nm, &y, &k, None) {
        Err(Error::Fit(msg)) => {
            assert!(msg.contains("east") && msg.contains("east_copy"), "{msg}");
            assert!(!msg.contains("wave"), "{msg}");
        }
        other => panic!("expected a fit error, got {other:?}"),
    }
}

#[test]
fn interpolates_observed_sites_without_nugget() {
    let c = coords(10, 4.0, 7);
    let sites = SiteSet::from_coords(&c).unwrap();
    let k = ExpKernelParams::new(1.5, 0.0, 1.2).unwrap();
    let x = DMatrix::from_fn(10, 2, |i, j| if j == 0 { 1.0 } else { c[i].0 });
    let y: Vec<f64> = (0..10).map(|i| (i as f64 * 1.7).sin() * 3.0).collect();
    let m = gls_fit(&sites, &x, &names(2), &y, &k, None).unwrap();
    for i in 0..10 {
        let p = m.predict(c[i], &[1.0, c[i].0]).unwrap();
        assert!((p - y[i]).abs() < 1e-8, "site {i}: {p} vs {}", y[i]);
    }
}

#[test]
fn far_prediction_reverts_to_regression_mean() {
    let c = coords(50, 5.0, 8);
    let sites = SiteSet::from_coords(&c).unwrap();
    let k = ExpKernelParams::new(1.0, 0.1, 0.5).unwrap();
    let x = design(&c);
    let y: Vec<f64> = c.iter().map(|p| 2.0 + p.0 + (p.1 * 3.0).sin()).collect();
    let m = gls_fit(&sites, &x, &names(3), &y, &k, None).unwrap();
    let far: (f64, f64) = (5.0 + 20.0 * 0.5 + 1.0, 50.0);
    let xs = [1.0, far.0, (far.1 * 0.7).sin()];
    let reg: f64 = xs.iter().zip(m.z_hat.iter()).map(|(a, b)| a * b).sum();
    let p = m.predict(far, &xs).unwrap();
    assert!((p - reg).abs() < 1e-6 * (1.0 + reg.abs()), "{p} vs {reg}");
}

#[test]
fn prediction_is_linear_in_observations() {
    let c = coords(40, 6.0, 9);
    let sites = SiteSet::from_coords(&c).unwrap();
    let k = ExpKernelParams::new(1.0, 0.2, 1.0).unwrap();
    let x = DMatrix::from_element(40, 1, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let y1: Vec<f64> = (0..40).map(|_| StandardNormal.sample(&mut rng)).collect();
    let y2: Vec<f64> = (0..40).map(|_| StandardNormal.sample(&mut rng)).collect();
    let (a, b) = (2.5, -0.7);
    let y3: Vec<f64> = y1.iter().zip(&y2).map(|(u, v)| a * u + b * v).collect();
    let m1 = gls_fit(&sites, &x, &names(1), &y1, &k, None).unwrap();
    let m2 = gls_fit(&sites, &x, &names(1), &y2, &k, None).unwrap();
    let m3 = gls_fit(&sites, &x, &names(1), &y3, &k, None).unwrap();
    for p in [(0.5, 0.5), (3.3, 2.1), (5.9, 5.9), (12.0, 1.0)] {
        let want = a * m1.predict(p, &[1.0]).unwrap() + b * m2.predict(p, &[1.0]).unwrap();
        let got = m3.predict(p, &[1.0]).unwrap();
        assert!((got - want).abs() < 1e-10 * (1.0 + want.abs()));
    }
}

#[test]
fn held_out_prediction_is_unbiased() {
    let c = coords(120, 10.0, 11);
    let all = SiteSet::from_coords(&c).unwrap();
    let (fit_c, out_c) = c.split_at(100);
    let fit_sites = SiteSet::from_coords(fit_c).unwrap();
    let k = ExpKernelParams::new(1.0, 0.25, 2.0).unwrap();
    let sampler = GaussianSampler::new(&all, &k, SamplerKind::Cholesky).unwrap();
    let beta = [1.0, 0.4, -2.0];
    let x_all = design(&c);
    let x_fit = x_all.rows(0, 100).into_owned();
    let x_out = x_all.rows(100, 20).into_owned();
    let mut means = Vec::new();
    for rep in 0..200 {
        let mut rng = rep_rng(12, rep);
        let z = sampler.sample(&mut rng);
        let y: Vec<f64> = (0..120)
            .map(|i| (0..3).map(|j| x_all[(i, j)] * beta[j]).sum::<f64>() + z[i])
            .collect();
        let m = gls_fit(&fit_sites, &x_fit, &names(3), &y[..100], &k, None).unwrap();
        let pred = m.predict_many(out_c, &x_out).unwrap();
        let err: f64 = pred.iter().zip(&y[100..]).map(|(p, t)| p - t).sum::<f64>() / 20.0;
        means.push(err);
    }
    let n = means.len() as f64;
    let mu = means.iter().sum::<f64>() / n;
    let sd = (means.iter().map(|e| (e - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    assert!(mu.abs() < 3.0 * se, "mean error {mu}, se {se}");
}

#[test]
fn rank_reduced_error_shrinks_with_rank() {
    let c = coords(150, 10.0, 13);
    let sites = SiteSet::from_coords(&c).unwrap();
    let k = ExpKernelParams::new(1.0, 0.1, 2.5).unwrap();
    let x = design(&c);
    let sampler = GaussianSampler::new(&sites, &k, SamplerKind::Cholesky).unwrap();
    let z = sampler.sample(&mut rep_rng(14, 0));
    let y: Vec<f64> = (0..150).map(|i| 1.0 + 0.3 * x[(i, 1)] + z[i]).collect();
    let pts = coords(60, 10.0, 15);
    let xs = design(&pts);
    let exact = gls_fit(&sites, &x, &names(3), &y, &k, None).unwrap().predict_many(&pts, &xs).unwrap();
    let full = exact_eigs(&cov_matrix(&sites, &k).unwrap(), 150).unwrap();
    let mut errs = Vec::new();
    for l in [10, 20, 40, 80, 120, 150] {
        let b = full.truncated(l).unwrap();
        let p = gls_fit(&sites, &x, &names(3), &y, &k, Some(&b)).unwrap().predict_many(&pts, &xs).unwrap();
        let rmse = (p.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 60.0).sqrt();
        errs.push((l, rmse));
    }
    for w in errs.windows(2) {
        assert!(w[1].1 <= w[0].1 * (1.0 + 1e-9), "{errs:?}");
    }
    assert!(errs.last().unwrap().1 < 1e-6, "{errs:?}");
}

#[test]
fn boxcox_lognormal_gives_log() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let y: Vec<f64> = (0..5000).map(|_| (0.3 + 0.8 * { let e: f64 = StandardNormal.sample(&mut rng); e }).exp()).collect();
    let (lambda, t) = boxcox_fit_transform(&y).unwrap();
    assert!(lambda.abs() <= 0.15, "{lambda}");
    assert_eq!(t.len(), 5000);
}

#[test]
fn boxcox_gaussian_stays_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let y: Vec<f64> = (0..5000).map(|_| 6.0 + { let e: f64 = StandardNormal.sample(&mut rng); e }).collect();
    let (lambda, _) = boxcox_fit_transform(&y).unwrap();
    assert!((lambda - 1.0).abs() <= 0.3, "{lambda}");
}

#[test]
fn boxcox_rejects_bad_input() {
    assert!(matches!(boxcox_fit_transform(&[1.0, 0.0, 2.0]), Err(Error::Input(_))));
    match boxcox_fit_transform(&[3.0; 20]) {
        Err(Error::Fit(m)) => assert!(m.contains("zero variance")),
        other => panic!("{other:?}"),
    }
}

//! Derivative-free minimisers used by every fitting routine: a box-bounded
//! Nelder–Mead simplex and Brent's bracketed line minimiser.
//!
//! Both never return a point worse than the starting point, which is what the
//! monotone alternating fits rely on.

#[derive(Debug, Clone, Copy)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn free() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    #[inline]
    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the simplex function values span less than this.
    pub f_tol: f64,
    /// ... and the simplex vertices lie within this of the best vertex.
    pub x_tol: f64,
    /// Number of restarts from the best point; restarts undo simplex collapse.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 4000,
            f_tol: 1e-10,
            x_tol: 1e-8,
            restarts: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimises `f` inside the box `bounds` starting from `x0`.
///
/// `step` holds the initial simplex edge per coordinate. Vertices are
/// projected onto the box. Non-finite objective values are treated as +inf.
pub fn nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    bounds: &[Bounds],
    opts: &NelderMeadOptions,
) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(step.len(), n);
    assert_eq!(bounds.len(), n);
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let project = |x: &mut [f64]| {
        for (xi, b) in x.iter_mut().zip(bounds) {
            *xi = b.clamp(*xi);
        }
    };

    let mut best: Vec<f64> = x0.to_vec();
    project(&mut best);
    let mut best_f = eval(&best, &mut evals);
    let mut converged = false;

    for round in 0..=opts.restarts {
        let scale = if round == 0 { 1.0 } else { 0.25 };
        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        let mut fv: Vec<f64> = Vec::with_capacity(n + 1);
        simplex.push(best.clone());
        fv.push(best_f);
        for i in 0..n {
            let mut v = best.clone();
            let h = step[i] * scale;
            v[i] += h;
            if v[i] > bounds[i].hi {
                v[i] = best[i] - h;
            }
            project(&mut v);
            if (v[i] - best[i]).abs() < 1e-15 {
                // pinned at a degenerate box; nudge inward
                v[i] = bounds[i].clamp(best[i] - h);
            }
            fv.push(eval(&v, &mut evals));
            simplex.push(v);
        }

        converged = false;
        while evals < opts.max_evals {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            fv = order.iter().map(|&i| fv[i]).collect();

            let spread_f = fv[n] - fv[0];
            let spread_x = simplex[1..]
                .iter()
                .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
                .fold(0.0f64, f64::max);
            if spread_f.abs() <= opts.f_tol * (1.0 + fv[0].abs()) && spread_x <= opts.x_tol {
                converged = true;
                break;
            }
            if spread_x <= 1e-14 {
                converged = true;
                break;
            }

            let mut centroid = vec![0.0; n];
            for v in &simplex[..n] {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / n as f64;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                let mut p: Vec<f64> = centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + t * (w - c))
                    .collect();
                project(&mut p);
                p
            };

            let xr = along(-1.0);
            let fr = eval(&xr, &mut evals);
            if fr < fv[0] {
                let xe = along(-2.0);
                let fe = eval(&xe, &mut evals);
                if fe < fr {
                    simplex[n] = xe;
                    fv[n] = fe;
                } else {
                    simplex[n] = xr;
                    fv[n] = fr;
                }
            } else if fr < fv[n - 1] {
                simplex[n] = xr;
                fv[n] = fr;
            } else {
                let (xc, fc) = if fr < fv[n] {
                    let xc = along(-0.5);
                    let fc = eval(&xc, &mut evals);
                    (xc, fc)
                } else {
                    let xc = along(0.5);
                    let fc = eval(&xc, &mut evals);
                    (xc, fc)
                };
                if fc < fv[n].min(fr) {
                    simplex[n] = xc;
                    fv[n] = fc;
                } else {
                    for i in 1..=n {
                        let mut p: Vec<f64> = simplex[0]
                            .iter()
                            .zip(&simplex[i])
                            .map(|(b, v)| b + 0.5 * (v - b))
                            .collect();
                        project(&mut p);
                        fv[i] = eval(&p, &mut evals);
                        simplex[i] = p;
                    }
                }
            }
        }
        let (ib, _) = fv
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty simplex");
        let improved = fv[ib] < best_f;
        if fv[ib] <= best_f {
            best_f = fv[ib];
            best = simplex[ib].clone();
        }
        if evals >= opts.max_evals || (round > 0 && !improved) {
            break;
        }
    }

    Minimum {
        x: best,
        f: best_f,
        evals,
        converged,
    }
}

/// Brent's method on `[lo, hi]`, started at `x0`. Returns `(x, f(x))` and
/// never returns a value above `f(x0)`.
pub fn brent<F>(mut f: F, lo: f64, hi: f64, x0: f64, tol: f64, max_iter: usize) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let mut fe = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    const CGOLD: f64 = 0.381_966_011_250_105;
    let (mut a, mut b) = (lo, hi);
    let x0 = x0.max(lo).min(hi);
    let f0 = fe(x0);
    let (mut x, mut w, mut v) = (x0, x0, x0);
    let (mut fx, mut fw, mut fv) = (f0, f0, f0);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + tol1.copysign(d)
        };
        let fu = fe(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    if fx <= f0 {
        (x, fx)
    } else {
        (x0, f0)
    }
}

/// Central-difference Hessian of `f` at `x` with per-coordinate steps.
pub fn numeric_hessian<F>(mut f: F, x: &[f64], steps: &[f64]) -> nalgebra::DMatrix<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x.len();
    let mut h = nalgebra::DMatrix::zeros(n, n);
    let f0 = f(x);
    let mut p = x.to_vec();
    for i in 0..n {
        let hi = steps[i];
        p[i] = x[i] + hi;
        let fp = f(&p);
        p[i] = x[i] - hi;
        let fm = f(&p);
        p[i] = x[i];
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in (i + 1)..n {
            let hj = steps[j];
            let mut q = |si: f64, sj: f64| {
                p[i] = x[i] + si * hi;
                p[j] = x[j] + sj * hj;
                let v = f(&p);
                p[i] = x[i];
                p[j] = x[j];
                v
            };
            let v = (q(1.0, 1.0) - q(1.0, -1.0) - q(-1.0, 1.0) + q(-1.0, -1.0)) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

/// Damped Newton with central-difference derivatives inside a box, for
/// small smooth problems where each evaluation is expensive. Coordinates
/// pinned at a bound with the gradient pointing outward are held fixed. Each
/// accepted step lowers `f`, so the result is never worse than `x0`.
pub fn newton_box<F>(
    mut f: F,
    x0: &[f64],
    steps: &[f64],
    bounds: &[Bounds],
    f_tol: f64,
    max_iter: usize,
) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut fe = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut x: Vec<f64> = x0.iter().zip(bounds).map(|(v, b)| b.clamp(*v)).collect();
    let mut fx = fe(&x, &mut evals);
    let mut converged = false;
    for _ in 0..max_iter {
        if !fx.is_finite() {
            break;
        }
        let mut grad = vec![0.0; n];
        let mut p = x.clone();
        for i in 0..n {
            p[i] = x[i] + steps[i];
            let fp = fe(&p, &mut evals);
            p[i] = x[i] - steps[i];
            let fm = fe(&p, &mut evals);
            p[i] = x[i];
            grad[i] = (fp - fm) / (2.0 * steps[i]);
        }
        if grad.iter().any(|g| !g.is_finite()) {
            break;
        }
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                let at_lo = x[i] <= bounds[i].lo + 1e-12 && grad[i] > 0.0;
                let at_hi = x[i] >= bounds[i].hi - 1e-12 && grad[i] < 0.0;
                !(at_lo || at_hi)
            })
            .collect();
        if free.is_empty() {
            converged = true;
            break;
        }
        let hess = numeric_hessian(
            |q: &[f64]| fe(q, &mut evals),
            &x,
            steps,
        );
        let k = free.len();
        let mut h = nalgebra::DMatrix::from_fn(k, k, |a, b| hess[(free[a], free[b])]);
        let g = nalgebra::DVector::from_iterator(k, free.iter().map(|&i| grad[i]));
        if h.iter().any(|v| !v.is_finite()) {
            break;
        }
        let min_eig = h.clone().symmetric_eigenvalues().min();
        let scale = h.diagonal().abs().max().max(1e-12);
        if min_eig < 1e-8 * scale {
            for d in 0..k {
                h[(d, d)] += 1e-8 * scale - min_eig;
            }
        }
        let Some(dir) = h.cholesky().map(|c| c.solve(&(-&g))) else {
            break;
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let mut cand = x.clone();
            for (a, &i) in free.iter().enumerate() {
                cand[i] = bounds[i].clamp(x[i] + t * dir[a]);
            }
            let fc = fe(&cand, &mut evals);
            if fc < fx {
                let gain = fx - fc;
                x = cand;
                fx = fc;
                accepted = true;
                if gain < f_tol {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    Minimum {
        x,
        f: fx,
        evals,
        converged,
    }
}

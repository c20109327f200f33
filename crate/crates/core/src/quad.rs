//! Adaptive Gauss–Kronrod (7/15) quadrature for vector-valued integrands.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<const K: usize, F>(f: &mut F, a: f64, b: f64) -> ([f64; K], f64)
where
    F: FnMut(f64) -> [f64; K],
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = [0.0; K];
    let mut gauss = [0.0; K];
    for k in 0..K {
        kron[k] = WGK[7] * fc[k];
        gauss[k] = WG[3] * fc[k];
    }
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        for k in 0..K {
            let s = f1[k] + f2[k];
            kron[k] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[k] += WG[j / 2] * s;
            }
        }
    }
    let mut err = 0.0f64;
    for k in 0..K {
        kron[k] *= h;
        gauss[k] *= h;
        err = err.max((kron[k] - gauss[k]).abs());
    }
    (kron, err)
}

/// Integrates `f` componentwise over `[a, b]`. Subdivides the interval with
/// the largest error estimate until the total estimate drops below
/// `max(abs_tol, rel_tol * |I|)` for every component or `max_intervals` is hit.
/// Returns the integral and whether the tolerance was met.
pub fn integrate<const K: usize, F>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> ([f64; K], bool)
where
    F: FnMut(f64) -> [f64; K],
{
    let mut parts: Vec<(f64, f64, [f64; K], f64)> = Vec::new();
    let (v, e) = gk15(&mut f, a, b);
    parts.push((a, b, v, e));
    loop {
        let mut total = [0.0; K];
        let mut err = 0.0;
        for p in &parts {
            for k in 0..K {
                total[k] += p.2[k];
            }
            err += p.3;
        }
        let scale = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if err <= abs_tol.max(rel_tol * scale) {
            return (total, true);
        }
        if parts.len() >= max_intervals {
            return (total, false);
        }
        let (iw, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, _, _) = parts.swap_remove(iw);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

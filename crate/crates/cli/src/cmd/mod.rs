pub mod bench;
pub mod cluster;
pub mod fit;
pub mod lmoments;
pub mod sblue;
pub mod simulate;

use tghrf::io::fmt_f64;

pub(crate) fn f(v: f64) -> String {
    fmt_f64(v)
}

pub(crate) fn fs(vs: &[f64]) -> Vec<String> {
    vs.iter().map(|&v| fmt_f64(v)).collect()
}

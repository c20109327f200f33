//! Field CSV to per-day spatial data.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use tghrf::io::{group_by_day, pool_adjacent_days, read_field_csv, Observation};
use tghrf::rf::SpatialData;
use tghrf::{Error, Result, SiteSet};

pub type Days = BTreeMap<i64, Vec<Observation>>;

/// Days of a field CSV, optionally pooled with their neighbours and
/// restricted to one day.
pub fn load_days(path: &Path, pool_min: Option<usize>, day: Option<i64>) -> Result<Days> {
    let obs = read_field_csv(path)?;
    if obs.is_empty() {
        return Err(Error::Input(format!("{} has no rows", path.display())));
    }
    let mut days = group_by_day(&obs);
    if let Some(min) = pool_min {
        days = pool_adjacent_days(&days, min);
    }
    if let Some(t) = day {
        let obs = days
            .remove(&t)
            .ok_or_else(|| Error::Input(format!("day {t} not found in {}", path.display())))?;
        days = BTreeMap::from([(t, obs)]);
    }
    Ok(days)
}

/// Bit pattern of a coordinate pair, for exact matching.
pub fn key(x: f64, y: f64) -> (u64, u64) {
    ((x + 0.0).to_bits(), (y + 0.0).to_bits())
}

/// Non-missing observations as spatial data. Repeated coordinates (from day
/// pooling) are averaged into one site.
pub fn spatial(obs: &[Observation]) -> Result<SpatialData> {
    let mut order = Vec::new();
    let mut acc: HashMap<(u64, u64), (f64, f64, f64, usize)> = HashMap::new();
    for o in obs.iter().filter(|o| !o.value.is_nan()) {
        let k = key(o.x, o.y);
        let e = acc.entry(k).or_insert_with(|| {
            order.push(k);
            (o.x, o.y, 0.0, 0)
        });
        e.2 += o.value;
        e.3 += 1;
    }
    let coords: Vec<(f64, f64)> = order.iter().map(|k| (acc[k].0, acc[k].1)).collect();
    let values: Vec<f64> = order.iter().map(|k| acc[k].2 / acc[k].3 as f64).collect();
    SpatialData::new(SiteSet::from_coords(&coords)?, values)
}

/// Integer list option; a newtype so clap stores it as one value.
#[derive(Debug, Clone, PartialEq)]
pub struct IntList(pub Vec<usize>);

#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

pub fn int_list(s: &str) -> std::result::Result<IntList, String> {
    parse_range(s).map(IntList)
}

pub fn float_list(s: &str) -> std::result::Result<FloatList, String> {
    parse_floats(s).map(FloatList)
}

/// Parses `3..10` (inclusive) or `3,5,7`.
pub fn parse_range(s: &str) -> std::result::Result<Vec<usize>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| format!("bad range start in {s:?}"))?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| format!("bad range end in {s:?}"))?;
        if a > b {
            return Err(format!("empty range {s:?}"));
        }
        Ok((a..=b).collect())
    } else {
        s.split(',').map(|v| v.trim().parse().map_err(|_| format!("bad integer {v:?} in {s:?}"))).collect()
    }
}

pub fn parse_floats(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad number {v:?} in {s:?}")))
        .collect()
}

pub fn parse_point(s: &str) -> std::result::Result<(f64, f64), String> {
    match parse_floats(s)?.as_slice() {
        [x, y] => Ok((*x, *y)),
        _ => Err(format!("expected x,y, got {s:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("3..5").unwrap(), vec![3, 4, 5]);
        assert_eq!(parse_range("2,7").unwrap(), vec![2, 7]);
        assert!(parse_range("5..3").is_err());
        assert_eq!(parse_point("1.5, -2").unwrap(), (1.5, -2.0));
    }

    #[test]
    fn pooled_duplicates_are_averaged() {
        let o = |x, v| Observation { x, y: 0.0, t: 1, value: v };
        let d = spatial(&[o(0.0, 1.0), o(1.0, 2.0), o(0.0, 3.0), o(2.0, f64::NAN)]).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.values, vec![2.0, 2.0]);
    }
}

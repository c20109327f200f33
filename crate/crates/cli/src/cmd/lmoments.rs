use std::collections::HashMap;

use rayon::prelude::*;
use tghrf::io::{read_field_csv, Table};
use tghrf::lmoments::lmoment_match;
use tghrf::{Error, Result};

use super::{f, fs};
use crate::config::Provenance;
use crate::data::key;
use crate::LmomentsArgs;

pub fn run(a: &LmomentsArgs, prov: &Provenance) -> Result<()> {
    let obs = read_field_csv(&a.input)?;
    if obs.is_empty() {
        return Err(Error::Input(format!("{} has no rows", a.input.display())));
    }
    let mut order = Vec::new();
    let mut cells: HashMap<(u64, u64), (f64, f64, Vec<f64>)> = HashMap::new();
    for o in &obs {
        let k = key(o.x, o.y);
        let e = cells.entry(k).or_insert_with(|| {
            order.push(k);
            (o.x, o.y, Vec::new())
        });
        if !o.value.is_nan() {
            e.2.push(o.value);
        }
    }
    let rows: Vec<Vec<String>> = order
        .par_iter()
        .map(|k| {
            let (x, y, vals) = &cells[k];
            let nan = [f64::NAN; 4];
            let (p, flag) = if vals.len() < a.min_days.max(4) {
                (nan, format!("only {} days", vals.len()))
            } else {
                match lmoment_match(vals) {
                    Ok(m) => (
                        [m.params.a, m.params.b, m.params.g, m.params.h],
                        if m.boundary { "boundary".to_string() } else { String::new() },
                    ),
                    Err(e @ (Error::Fit(_) | Error::Numeric { .. } | Error::Optimizer(_))) => (nan, e.to_string()),
                    Err(e) => return Err(e),
                }
            };
            let mut row = vec![f(*x), f(*y)];
            row.extend(fs(&p));
            row.push(flag);
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new(&["x", "y", "a", "b", "g", "h", "flag"]);
    for r in rows {
        t.push(r);
    }
    prov.write(&a.out, &t)
}

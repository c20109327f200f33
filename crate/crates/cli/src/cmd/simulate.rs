use tghrf::io::Table;
use tghrf::kernels::ExpKernelParams;
use tghrf::simgen::{simulate_tgh_field, SimConfig};
use tghrf::{Error, GridSpec, Result, TghParams};

use super::f;
use crate::config::Provenance;
use crate::SimulateArgs;

pub fn run(a: &SimulateArgs, seed: u64, prov: &Provenance) -> Result<()> {
    if a.reps == 0 {
        return Err(Error::Input("--reps must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&a.nugget) {
        return Err(Error::Input(format!("--nugget must lie in [0, 1), got {}", a.nugget)));
    }
    let grid = GridSpec::new((0.0, 0.0), a.cell_size, a.side, a.side)?;
    let params = TghParams::new(a.a, a.b, a.g, a.h)?;
    let kernel = ExpKernelParams::correlation(a.range, a.nugget)?;
    let frames = simulate_tgh_field(&SimConfig::new(grid, params, kernel, seed, a.reps))?;
    let mut t = Table::new(&["x", "y", "t", "value"]);
    for fr in &frames {
        for (i, v) in fr.values.iter().enumerate() {
            let (x, y) = grid.coords(i);
            t.push(vec![f(x), f(y), fr.t.to_string(), f(*v)]);
        }
    }
    prov.write(&a.out, &t)
}

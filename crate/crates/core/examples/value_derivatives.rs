//! Value, gradient and Hessian of the smooth convex problem (P2) at a few
//! states, from one descent plus one variational solve per point.

use lcflow::paths::{generate_brownian, TimeGrid};
use lcflow::problem::presets;
use lcflow::value::{evaluate_value, ValueOptions};

fn main() -> lcflow::Result<()> {
    let spec = presets::p2();
    let grid = TimeGrid::new(0.0, spec.horizon, 40)?;
    let noise = generate_brownian(grid, 10_000, spec.dims.d, 3, true)?;
    let opts = ValueOptions::default();
    println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "x", "V", "stderr", "DxV", "DxxV");
    for x in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let s = evaluate_value(&spec, 0.0, &[x], &noise, &opts)?;
        let h = s.hessian()?;
        println!("{x:>6.2} {:>10.5} {:>10.5} {:>10.5} {:>10.5}", s.v, s.stderr_v, s.dv[0], h[(0, 0)]);
    }
    Ok(())
}

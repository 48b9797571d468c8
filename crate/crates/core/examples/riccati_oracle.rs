//! Backward Riccati integration for a coupled two-dimensional LQ problem:
//! prints `P(t)`, the feedback gain and the value at a few times.

use lcflow::paths::TimeGrid;
use lcflow::problem::presets;
use lcflow::riccati::{lq_value, solve_riccati_ode};

fn main() -> lcflow::Result<()> {
    let spec = presets::coupled_lq_2d();
    let grid = TimeGrid::new(0.0, spec.horizon, 100)?;
    let ric = solve_riccati_ode(&spec, grid, 4)?;
    let x = [0.5, -0.25];
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let v = lq_value(&ric, t, &x)?;
        println!("t = {t:.2}");
        println!("  P     = {:.5?}", ric.p_at(t).as_slice());
        println!("  gain  = {:.5?}", ric.gain_at(t).as_slice());
        println!("  V(t, {x:?}) = {:.6}, DxV = {:.5?}", v.v, v.dv);
    }
    println!("smallest control-curvature margin: {:.4}", ric.min_margin());
    Ok(())
}

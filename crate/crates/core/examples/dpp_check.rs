//! Dynamic programming gap `V(t,x) − E[∫ l + V(t+h, X_{t+h})]` on P1 with
//! the exact continuation value and on P2 with a fitted one.

use lcflow::paths::{generate_brownian, TimeGrid};
use lcflow::problem::presets;
use lcflow::riccati::solve_riccati_ode;
use lcflow::value::{dpp_gap, BudgetFactors, Continuation, ValueOptions};

fn main() -> lcflow::Result<()> {
    let opts = ValueOptions { hessian: false, ..ValueOptions::default() };
    let budget = BudgetFactors::default();

    let p1 = presets::p1(0.3);
    let grid = TimeGrid::new(0.0, p1.horizon, 50)?;
    let noise = generate_brownian(grid, 20_000, 1, 2, true)?;
    let ric = solve_riccati_ode(&p1, grid, 4)?;
    for x in [-1.0, 0.0, 1.0] {
        let r = dpp_gap(&p1, 0.0, &[x], 0.2, &noise, &opts, Continuation::Oracle(&ric), &budget)?;
        println!("P1 x={x:>5.2}: V {:.5} = running {:.5} + continuation {:.5}, gap {:+.2e} (tolerance {:.2e})",
            r.value, r.running_cost, r.continuation_value, r.gap, r.tolerance);
    }

    let p2 = presets::p2();
    for x in [-1.0, 0.0, 1.0] {
        let r = dpp_gap(&p2, 0.0, &[x], 0.2, &noise, &opts, Continuation::Fitted, &budget)?;
        println!("P2 x={x:>5.2}: V {:.5} = running {:.5} + continuation {:.5}, gap {:+.2e} (tolerance {:.2e})",
            r.value, r.running_cost, r.continuation_value, r.gap, r.tolerance);
    }
    Ok(())
}

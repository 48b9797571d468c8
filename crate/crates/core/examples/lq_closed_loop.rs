//! Riccati feedback on P1: the closed loop against the open-loop optimum,
//! perturbed gains, and the deliberately wrong gain −1.3.

use lcflow::descent::{solve_hamiltonian, DescentConfig};
use lcflow::feedback::{verify_optimality, NewtonConfig, VerificationConfig};
use lcflow::paths::{generate_brownian, TimeGrid};
use lcflow::problem::presets;
use lcflow::regression::RegressionBasis;
use lcflow::riccati::solve_riccati_ode;
use lcflow::value::OracleSource;

fn main() -> lcflow::Result<()> {
    let spec = presets::p1(0.3);
    let grid = TimeGrid::new(0.0, spec.horizon, 50)?;
    let noise = generate_brownian(grid, 20_000, 1, 5, true)?;
    let open = solve_hamiltonian(&spec, 0.0, &[0.5], &noise, RegressionBasis::default(), &DescentConfig::default())?;
    let source = OracleSource { ric: solve_riccati_ode(&spec, grid, 4)? };
    let rep = verify_optimality(&spec, &open, &source, &NewtonConfig::default(), &VerificationConfig::default())?;

    println!("V(0, 0.5)       {:.5}", rep.value);
    println!("J closed loop   {:.5} ± {:.5}", rep.j_closed.mean, rep.j_closed.stderr);
    println!("J open loop     {:.5} ± {:.5}", rep.j_open.mean, rep.j_open.stderr);
    println!("tolerance       {:.5}", rep.tolerance);
    for p in &rep.perturbed {
        println!("perturbed gain {:+.3} offset {:+.3}: excess {:+.5} ± {:.5}", p.gain_shift[0], p.offset_shift[0], p.excess, p.excess_stderr);
    }
    if let Some(w) = &rep.wrong_gain {
        println!("gain −1.3: excess {:+.5} ± {:.5}, exact cost {:?}", w.excess, w.excess_stderr, w.exact_cost);
    }
    println!("passed: {}", rep.passed);
    Ok(())
}

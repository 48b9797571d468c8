//! Feedback for the non-LQ problem P2: value derivatives are regressed from
//! one optimal and one variational solve, tabulated on a lattice, and the
//! pointwise Hamiltonian minimizer drives the closed loop.

use lcflow::descent::{solve_hamiltonian, DescentConfig};
use lcflow::feedback::{feedback_map, open_loop_agreement, verify_optimality, NewtonConfig, VerificationConfig};
use lcflow::fitted::{FittedSource, LatticeSource};
use lcflow::paths::{generate_brownian, TimeGrid};
use lcflow::problem::presets;
use lcflow::regression::RegressionBasis;
use lcflow::variational::{freeze_second_order, solve_linear_hamiltonian};

fn main() -> lcflow::Result<()> {
    let spec = presets::p2();
    let basis = RegressionBasis::default();
    let descent = DescentConfig::default();
    let newton = NewtonConfig::default();
    let grid = TimeGrid::new(0.0, spec.horizon, 40)?;
    let noise = generate_brownian(grid, 10_000, 1, 6, true)?;

    let open = solve_hamiltonian(&spec, 0.0, &[0.5], &noise, basis, &descent)?;
    let frozen = freeze_second_order(&spec, &open)?;
    let deriv = solve_linear_hamiltonian(&spec, &open, &frozen, basis, &descent)?;
    let (fitted, skipped) = FittedSource::new(&spec, &open, &deriv, basis, 4.0)?;
    let lattice = LatticeSource::new(fitted, 0.05)?;
    println!("singular samples skipped: {skipped}, lattice refinement error {:.2e}", lattice.refinement_error);

    for x in [-0.5, 0.0, 0.5, 1.0] {
        let u = feedback_map(&spec, &lattice, 0.5, &[x], &newton)?;
        println!("u(0.5, {x:>4.1}) = {:+.5}", u[0]);
    }
    let agreement = open_loop_agreement(&spec, &open, &lattice, &newton)?;
    println!("open-loop vs feedback relative L2: {agreement:.4}");
    let cfg = VerificationConfig { wrong_gain: None, ..VerificationConfig::default() };
    let rep = verify_optimality(&spec, &open, &lattice, &newton, &cfg)?;
    println!("J closed {:.5}, J open {:.5}, V {:.5}, tolerance {:.5}", rep.j_closed.mean, rep.j_open.mean, rep.value, rep.tolerance);
    Ok(())
}

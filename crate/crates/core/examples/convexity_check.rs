//! Convexity of `u ↦ J(u)` along random directions and of `x ↦ V(t, x)`
//! along a segment, for P2.

use lcflow::descent::{solve_hamiltonian, uniform_convexity_gap};
use lcflow::paths::{generate_brownian, TimeGrid};
use lcflow::problem::presets;
use lcflow::value::{convexity_probe, ValueOptions};

fn main() -> lcflow::Result<()> {
    let spec = presets::p2();
    let grid = TimeGrid::new(0.0, spec.horizon, 40)?;
    let noise = generate_brownian(grid, 8_000, 1, 4, true)?;
    let opts = ValueOptions { hessian: false, ..ValueOptions::default() };

    let sol = solve_hamiltonian(&spec, 0.0, &[0.0], &noise, opts.basis, &opts.descent)?;
    let gap = uniform_convexity_gap(&spec, &sol, opts.basis, 20, 9)?;
    println!("uniform convexity modulus of J: {gap:.4} (declared δ = {})", spec.certificate.delta);

    let pairs = vec![(vec![-1.5], vec![1.0]), (vec![0.0], vec![2.0])];
    let report = convexity_probe(&spec, 0.0, &pairs, &[0.25, 0.5, 0.75], &noise, &opts, 4.0)?;
    for r in &report.rows {
        println!("x0={:?} x1={:?} λ={:.2}: chord − V = {:+.5} ± {:.5}", r.x0, r.x1, r.lambda, r.gap, r.stderr);
    }
    Ok(())
}

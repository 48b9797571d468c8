//! Solves the scalar benchmark `dX = u dt + σ dW`, cost `½∫(X²+u²) + ½X_T²`,
//! from `(0, 0)` and compares against the Riccati value.

use lcflow::descent::{solve_hamiltonian, DescentConfig};
use lcflow::paths::{generate_brownian, TimeGrid};
use lcflow::problem::presets;
use lcflow::regression::RegressionBasis;
use lcflow::riccati::{lq_value, solve_riccati_ode};

fn main() -> lcflow::Result<()> {
    let paths: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let spec = presets::p1(0.3);
    let grid = TimeGrid::new(0.0, spec.horizon, 50)?;
    let noise = generate_brownian(grid, paths, 1, 7, true)?;
    let sol = solve_hamiltonian(&spec, 0.0, &[0.0], &noise, RegressionBasis::default(), &DescentConfig::default())?;
    let ric = solve_riccati_ode(&spec, grid, 4)?;
    let exact = lq_value(&ric, 0.0, &[0.0])?.v;
    println!("iterations      {}", sol.report.iterations.len() - 1);
    println!("K_hat           {:?}", sol.report.k_hat);
    println!("eta             {:.4}", sol.report.eta);
    println!("contraction     {:.4}", sol.report.max_contraction_ratio());
    println!("J(u)            {:.6} ± {:.6}", sol.cost.mean, sol.cost.stderr);
    println!("Riccati V(0,0)  {exact:.6}");
    println!("wall time       {:.2}s", sol.report.wall_time_s);
    Ok(())
}

//! HJB residual `∂ₜV + 𝓛V + H` on P1, once with the Riccati value and once
//! with values recomputed by the solver.

use lcflow::feedback::NewtonConfig;
use lcflow::paths::{generate_brownian, TimeGrid};
use lcflow::problem::presets;
use lcflow::riccati::solve_riccati_ode;
use lcflow::value::{hjb_residual, HjbConfig, OracleSource, SolverSource, ValueOptions, ValueSource};

fn print(source: &dyn ValueSource, report: &lcflow::value::HjbResidualReport) {
    for p in &report.points {
        println!("{:>8} t={:.2} x={:>5.2}  residual {:+.3e}  tolerance {:.3e}", source.label(), p.t, p.x[0], p.residual, p.tolerance);
    }
}

fn main() -> lcflow::Result<()> {
    let spec = presets::p1(0.3);
    let grid = TimeGrid::new(0.0, spec.horizon, 50)?;
    let cfg = HjbConfig::for_grid(grid.dt());
    let newton = NewtonConfig::default();

    let oracle = OracleSource { ric: solve_riccati_ode(&spec, grid, 4)? };
    let points: Vec<(f64, Vec<f64>)> = [0.0, 0.3, 0.6].iter().flat_map(|&t| [(t, vec![-1.0]), (t, vec![0.5])]).collect();
    print(&oracle, &hjb_residual(&spec, &oracle, &points, &cfg, &newton)?);

    let noise = generate_brownian(grid, 5_000, 1, 1, true)?;
    let solver = SolverSource { spec: &spec, noise: &noise, opts: ValueOptions::default() };
    print(&solver, &hjb_residual(&spec, &solver, &[(0.2, vec![0.0])], &cfg, &newton)?);
    Ok(())
}

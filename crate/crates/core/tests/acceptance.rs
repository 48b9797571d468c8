//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs as a plain binary so the lines always print.

use std::path::Path;
use std::time::Instant;

use lcflow::cli::{self, Command};
use lcflow::config::RunConfig;
use lcflow::descent::{solve_hamiltonian, solve_hamiltonian_from, uniform_convexity_gap, DescentConfig, HamiltonianSolution};
use lcflow::feedback::{feedback_map, verify_optimality, NewtonConfig, VerificationConfig};
use lcflow::linalg::mean_std;
use lcflow::paths::{generate_brownian, BrownianEnsemble, TimeGrid};
use lcflow::problem::{presets, ProblemSpec};
use lcflow::regression::RegressionBasis;
use lcflow::riccati::{lq_value, solve_riccati_ode, RiccatiSolution};
use lcflow::value::{
    convexity_probe, dpp_gap_from, evaluate_value, hjb_residual, regularity_margin, value_from_solution,
    BudgetFactors, Continuation, HjbConfig, OracleSource, SolverSource, ValueOptions, ValueSample,
};
use lcflow::variational::{hessian_from_derivative, riccati_state_check, DerivativeSolution};
use serde_json::Value;

const STEPS: usize = 50;
/// Paths for the main P1/P2 solves (criteria 1–4, 6–8, 10).
const PATHS_MAIN: usize = 50_000;
/// Paths for the checks that need many solves (criteria 5, 7 variant, 9, 11).
const PATHS_PROBE: usize = 10_000;
const SEED_MAIN: u64 = 20_240_601;
const SEED_PROBE: u64 = 77;

// Pinned tolerances.
const Y0_REL: f64 = 0.05;
const GAIN_L2_REL: f64 = 0.05;
const STATIONARITY: f64 = 1e-3;
const CONTRACTION_SLACK: f64 = 0.05;
const MAX_ITERATIONS: usize = 60;
const CONVEXITY_SLACK: f64 = 0.05;
const FD_STDERR_FACTOR: f64 = 3.0;
const FD_ABS: f64 = 0.01;
const HESSIAN_REL: f64 = 0.07;
const SYMMETRY_DEFECT: f64 = 0.05;
const RICCATI_TRACK_REL: f64 = 0.07;
const REGULARITY_SLACK: f64 = 0.05;
const DIFFUSION_MARGIN_REL: f64 = 0.05;
const FITTED_DPP_FACTOR: f64 = 5.0;
const ORACLE_HJB: f64 = 1e-6;
const SOLVER_HJB_FACTOR: f64 = 5.0;
const CONVEXITY_STDERR: f64 = 4.0;
const EXACT: f64 = 1e-8;
const THREADED_REL: f64 = 1e-10;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn basis() -> RegressionBasis {
    RegressionBasis::default()
}

fn descent() -> DescentConfig {
    DescentConfig::default()
}

fn noise(spec: &ProblemSpec, paths: usize, seed: u64) -> BrownianEnsemble {
    let grid = TimeGrid::new(0.0, spec.horizon, STEPS).unwrap();
    generate_brownian(grid, paths, spec.dims.d, seed, true).unwrap()
}

fn riccati(spec: &ProblemSpec) -> RiccatiSolution {
    solve_riccati_ode(spec, TimeGrid::new(0.0, spec.horizon, STEPS).unwrap(), 4).unwrap()
}

/// The main solve of a problem with its value sample and derivative solve.
struct Solved {
    spec: ProblemSpec,
    sol: HamiltonianSolution,
    sample: ValueSample,
    deriv: DerivativeSolution,
}

fn solve_main(spec: ProblemSpec, paths: usize, seed: u64) -> Solved {
    let w = noise(&spec, paths, seed);
    let sol = solve_hamiltonian(&spec, 0.0, &[0.0], &w, basis(), &descent()).unwrap();
    let opts = ValueOptions { basis: basis(), descent: descent(), hessian: true };
    let (sample, deriv) = value_from_solution(&spec, &sol, &opts).unwrap();
    Solved { spec, sol, sample, deriv: deriv.unwrap() }
}

fn criterion_1(p1: &Solved, ric: &RiccatiSolution) -> Outcome {
    let sol = &p1.sol;
    let v = lq_value(ric, 0.0, &[0.0]).unwrap();
    let dt = sol.noise.grid.dt();
    let tol_j = (2.0 * dt * v.v.abs() + 0.002).max(4.0 * sol.cost.std / (sol.x.paths() as f64).sqrt());
    let err_j = (sol.cost.mean - v.v).abs();
    let y0 = p1.sample.dv[0];
    let err_y = (y0 - v.dv[0]).abs();
    let tol_y = Y0_REL * v.dv[0].abs().max(1.0);
    let grid = sol.u.grid;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..grid.steps {
        let t = grid.node(k);
        let (g, o) = (ric.gain_at(t)[(0, 0)], ric.offset_at(t)[0]);
        for p in 0..sol.u.paths() {
            let target = g * sol.x.x(p, k)[0] + o;
            num += (sol.u.u(p, k)[0] - target).powi(2);
            den += target * target;
        }
    }
    let rel = (num / den).sqrt();
    outcome(
        err_j <= tol_j && err_y <= tol_y && rel <= GAIN_L2_REL,
        format!(
            "J = {:.6} vs V = {:.6} (|err| {err_j:.2e} <= {tol_j:.2e}); Y0 = {y0:.2e} (|err| <= {tol_y}); |u - gain X| rel L2 = {rel:.4} <= {GAIN_L2_REL}",
            sol.cost.mean, v.v
        ),
    )
}

fn criterion_2(p1: &Solved, p2: &Solved) -> Outcome {
    let a = p1.sol.report.stationarity_residual;
    let b = p2.sol.report.stationarity_residual;
    outcome(a <= STATIONARITY && b <= STATIONARITY, format!("|D[u]| P1 = {a:.2e}, P2 = {b:.2e} <= {STATIONARITY:.0e}"))
}

fn criterion_3(p1: &Solved) -> Outcome {
    let rep = &p1.sol.report;
    let bound = rep.contraction_bound(p1.spec.certificate.delta).unwrap_or(f64::NAN);
    let ratio = rep.max_contraction_ratio();
    let iters = rep.iterations.len() - 1;
    outcome(
        ratio <= bound + CONTRACTION_SLACK && iters <= MAX_ITERATIONS && rep.converged,
        format!(
            "max ratio {ratio:.4} <= {bound:.4} + {CONTRACTION_SLACK} (eta = {:.4}, K_hat = {:.4}); {iters} iterations <= {MAX_ITERATIONS}",
            rep.eta,
            rep.k_hat.unwrap_or(f64::NAN)
        ),
    )
}

fn criterion_4(p1: &Solved, p2: &Solved) -> Outcome {
    let g1 = uniform_convexity_gap(&p1.spec, &p1.sol, basis(), 20, 5).unwrap();
    let g2 = uniform_convexity_gap(&p2.spec, &p2.sol, basis(), 20, 5).unwrap();
    let need = |s: &Solved| s.spec.certificate.delta - CONVEXITY_SLACK;
    outcome(
        g1 >= need(p1) && g2 >= need(p2),
        format!("min gap over 20 perturbations: P1 {g1:.4} >= {:.2}, P2 {g2:.4} >= {:.2}", need(p1), need(p2)),
    )
}

/// Central difference of `V(0, ·)` on common noise against `DₓV = Ȳ₀`.
fn gradient_identity(spec: &ProblemSpec, w: &BrownianEnsemble) -> (bool, String) {
    let mut ok = true;
    let mut worst = String::new();
    let mut worst_ratio = 0.0f64;
    for x in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let h = 0.05 * (1.0 + f64::abs(x));
        let centre = solve_hamiltonian(spec, 0.0, &[x], w, basis(), &descent()).unwrap();
        let plus = solve_hamiltonian_from(spec, 0.0, &[x + h], w, basis(), &descent(), Some(centre.u.clone())).unwrap();
        let minus = solve_hamiltonian_from(spec, 0.0, &[x - h], w, basis(), &descent(), Some(centre.u.clone())).unwrap();
        let per_path: Vec<f64> =
            plus.path_costs.iter().zip(&minus.path_costs).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let (fd, sd) = mean_std(&per_path);
        let stderr = sd / (per_path.len() as f64).sqrt();
        let dv = centre.adjoint.y.mean_at(0)[0];
        let tol = (FD_STDERR_FACTOR * stderr).max(FD_ABS * (1.0 + f64::abs(x)));
        let err = (dv - fd).abs();
        ok &= err <= tol;
        if err / tol >= worst_ratio {
            worst_ratio = err / tol;
            worst = format!("x = {x}: |{dv:.4} - {fd:.4}| = {err:.2e} <= {tol:.2e}");
        }
    }
    (ok, worst)
}

fn criterion_5() -> Outcome {
    let p1 = presets::p1(0.3);
    let p2 = presets::p2();
    let (a, wa) = gradient_identity(&p1, &noise(&p1, PATHS_PROBE, SEED_PROBE));
    let (b, wb) = gradient_identity(&p2, &noise(&p2, PATHS_PROBE, SEED_PROBE));
    outcome(a && b, format!("worst P1 {wa}; worst P2 {wb}"))
}

fn criterion_6(p1: &Solved, ric: &RiccatiSolution) -> Outcome {
    let h = hessian_from_derivative(&p1.deriv).unwrap();
    let d2v = h.matrix[0];
    let err = (d2v - 1.0).abs();
    let track = riccati_state_check(&p1.deriv, Some(ric), 500);
    let rel = track.max_rel_error.unwrap_or(f64::NAN);
    outcome(
        err <= HESSIAN_REL && h.asymmetry <= SYMMETRY_DEFECT && rel <= RICCATI_TRACK_REL,
        format!(
            "D2V(0,0) = {d2v:.4} (|err| {err:.4} <= {HESSIAN_REL}); symmetry defect {:.2e}; max |P_hat - P|/|P| = {rel:.4} <= {RICCATI_TRACK_REL} over {} paths",
            h.asymmetry, track.sampled_paths
        ),
    )
}

fn criterion_7(p1: &Solved, p2: &Solved) -> Outcome {
    let margin = |s: &Solved| regularity_margin(&s.spec, &s.sample, 5.0, 200, 3, REGULARITY_SLACK).unwrap();
    let m1 = margin(p1);
    let m2 = margin(p2);
    let variant = solve_main(presets::p1_with_diffusion_control(0.5, 0.3), PATHS_PROBE, SEED_PROBE);
    let mv = margin(&variant);
    let v_ok = mv.passed && (mv.margin - 1.25).abs() <= DIFFUSION_MARGIN_REL * 1.25;
    outcome(
        m1.passed && m2.passed && v_ok && m1.margin == 1.0,
        format!("P1 {:.6}, D=0.5 variant {:.4} (1.25 ± 5%), P2 {:.4}; need >= delta - {REGULARITY_SLACK}", m1.margin, mv.margin, m2.margin),
    )
}

fn criterion_8(p1: &Solved, p2: &Solved, ric: &RiccatiSolution) -> Outcome {
    let a = dpp_gap_from(&p1.spec, &p1.sol, 0.2, basis(), Continuation::Oracle(ric), &BudgetFactors::default()).unwrap();
    let fitted = BudgetFactors { overall: FITTED_DPP_FACTOR, ..Default::default() };
    let b = dpp_gap_from(&p2.spec, &p2.sol, 0.2, basis(), Continuation::Fitted, &fitted).unwrap();
    outcome(
        a.passed && b.passed,
        format!(
            "P1 oracle gap {:.2e} <= {:.2e}; P2 fitted gap {:.2e} <= {:.2e}",
            a.gap.abs(),
            a.tolerance,
            b.gap.abs(),
            b.tolerance
        ),
    )
}

fn criterion_9(ric: &RiccatiSolution) -> Outcome {
    let spec = presets::p1(0.3);
    let oracle = OracleSource { ric: ric.clone() };
    let dt = 1.0 / STEPS as f64;
    let samples: Vec<(f64, Vec<f64>)> =
        (1..=9).map(|i| (dt * (5 * i) as f64, vec![-1.0 + 0.25 * (i - 1) as f64])).collect();
    let newton = NewtonConfig::default();
    let rep = hjb_residual(&spec, &oracle, &samples, &HjbConfig::for_grid(dt), &newton).unwrap();
    let oracle_ok = rep.max_abs_residual <= ORACLE_HJB;

    let w = noise(&spec, PATHS_PROBE, SEED_PROBE);
    let src = SolverSource { spec: &spec, noise: &w, opts: ValueOptions { basis: basis(), descent: descent(), hessian: true } };
    let cfg = HjbConfig { factor: SOLVER_HJB_FACTOR, ..HjbConfig::for_grid(dt) };
    let solver = hjb_residual(&spec, &src, &[(0.2, vec![0.0]), (0.5, vec![0.5])], &cfg, &newton).unwrap();
    let worst = solver.points.iter().map(|p| format!("{:.2e} <= {:.2e}", p.residual.abs(), p.tolerance)).collect::<Vec<_>>();
    outcome(
        oracle_ok && solver.passed,
        format!("oracle max |residual| over 9 points {:.2e} <= {ORACLE_HJB:.0e}; solver {}", rep.max_abs_residual, worst.join(", ")),
    )
}

fn criterion_10(p1: &Solved, ric: &RiccatiSolution) -> Outcome {
    let src = OracleSource { ric: ric.clone() };
    let rep = verify_optimality(&p1.spec, &p1.sol, &src, &NewtonConfig::default(), &VerificationConfig::default()).unwrap();
    let min_perturbed = rep.perturbed.iter().map(|p| p.cost.mean).fold(f64::INFINITY, f64::min);
    let wrong = rep.wrong_gain.as_ref().unwrap();
    outcome(
        rep.passed,
        format!(
            "|J_closed - J_open| = {:.2e}, |J_closed - V| = {:.2e} <= {:.2e}; min perturbed J {:.4} >= V - tol = {:.4}; gain -1.3 excess {:.2e} > {} x stderr {:.2e} (exact discrete excess {:.2e})",
            rep.gap_closed_open.abs(),
            rep.gap_closed_value.abs(),
            rep.tolerance,
            min_perturbed,
            rep.value - rep.tolerance,
            wrong.excess,
            VerificationConfig::default().mc_factor,
            wrong.excess_stderr,
            wrong.exact_cost.unwrap_or(f64::NAN) - rep.value,
        ),
    )
}

fn criterion_11() -> Outcome {
    let p2 = presets::p2();
    let opts = ValueOptions { basis: basis(), descent: descent(), hessian: false };
    let w2 = noise(&p2, PATHS_PROBE, SEED_PROBE);
    let pairs = vec![(vec![-1.0], vec![1.0])];
    let r2 = convexity_probe(&p2, 0.0, &pairs, &[0.25, 0.5, 0.75], &w2, &opts, CONVEXITY_STDERR).unwrap();
    let p2_min = r2.rows.iter().map(|r| r.gap + CONVEXITY_STDERR * r.stderr).fold(f64::INFINITY, f64::min);

    let p1 = presets::p1(0.3);
    let w1 = noise(&p1, PATHS_PROBE, SEED_PROBE);
    let r1 = convexity_probe(&p1, 0.0, &pairs, &[0.5], &w1, &opts, CONVEXITY_STDERR).unwrap();
    let row = &r1.rows[0];
    let budget = (3.0 * w1.grid.dt()).max(CONVEXITY_STDERR * row.stderr);
    let p1_ok = (row.gap - 0.5).abs() <= budget;
    outcome(
        r2.passed && p1_ok,
        format!(
            "P2 min(gap + 4 stderr) = {p2_min:.2e} >= 0 over {} rows; P1 lambda=1/2 gap {:.4} = 0.5 ± {budget:.3}",
            r2.rows.len(),
            row.gap
        ),
    )
}

fn criterion_12() -> Outcome {
    let opts = ValueOptions { basis: basis(), descent: descent(), hessian: true };
    let zero = presets::zero_problem();
    let wz = noise(&zero, 2000, 1);
    let s = evaluate_value(&zero, 0.0, &[0.7], &wz, &opts).unwrap();
    let newton = NewtonConfig::default();
    let solver = SolverSource { spec: &zero, noise: &wz, opts };
    let u = feedback_map(&zero, &solver, 0.0, &[0.7], &newton).unwrap()[0];
    let hjb = hjb_residual(&zero, &solver, &[(0.2, vec![0.7])], &HjbConfig::for_grid(wz.grid.dt()), &newton).unwrap();
    let zero_max = [s.v, s.dv[0], s.dvv.as_ref().unwrap()[0], u, hjb.max_abs_residual]
        .iter()
        .fold(0.0f64, |a, b| a.max(b.abs()));

    let lin = presets::linear_terminal(1.0);
    let wl = noise(&lin, 2000, 1);
    let sl = evaluate_value(&lin, 0.0, &[0.0], &wl, &opts).unwrap();
    let exact_v: f64 = -0.5;
    let budget = 2.0 * wl.grid.dt() * exact_v.abs() + 0.002;
    let dv_err = (sl.dv[0] - 1.0).abs();
    let v_err = (sl.v - exact_v).abs();
    outcome(
        zero_max <= EXACT && dv_err <= EXACT && v_err <= budget,
        format!("zero problem max |quantity| = {zero_max:.1e}; linear-terminal |DxV - 1| = {dv_err:.1e}, |V + 0.5| = {v_err:.1e} <= {budget:.3}"),
    )
}

fn run_cli(command: Command, cfg: &RunConfig, dir: &Path, threads: usize) -> (i32, Value, String) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let status = pool.install(|| cli::run(command, cfg, dir)).status;
    let text = std::fs::read_to_string(dir.join("report.json")).unwrap();
    (status, serde_json::from_str(&text).unwrap(), text)
}

/// Largest relative difference between numbers at matching positions.
fn max_rel_diff(a: &Value, b: &Value) -> f64 {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            (x - y).abs() / x.abs().max(y.abs()).max(1e-300)
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            x.iter().zip(y).map(|(p, q)| max_rel_diff(p, q)).fold(0.0, f64::max)
        }
        (Value::Object(x), Value::Object(y)) if x.len() == y.len() => x
            .iter()
            .map(|(k, v)| y.get(k).map_or(f64::INFINITY, |w| max_rel_diff(v, w)))
            .fold(0.0, f64::max),
        (x, y) if x == y => 0.0,
        _ => f64::INFINITY,
    }
}

fn criterion_13() -> Outcome {
    let commands = [
        Command::Validate,
        Command::Solve,
        Command::Value,
        Command::Feedback,
        Command::VerifyLq,
        Command::HjbCheck,
        Command::DppCheck,
        Command::ConvexityCheck,
    ];
    let tmp = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut notes = Vec::new();
    for preset in ["P1", "P2"] {
        let mut cfg = RunConfig::for_preset(preset);
        cfg.grid.steps = 20;
        cfg.monte_carlo.paths = 2000;
        cfg.checks.validation_samples = 200;
        cfg.checks.points = Some(vec![vec![0.0], vec![0.5]]);
        for command in commands {
            if preset == "P2" && command == Command::VerifyLq {
                continue;
            }
            let dir = |tag: &str| {
                let d = tmp.path().join(format!("{preset}-{command}-{tag}"));
                std::fs::create_dir_all(&d).unwrap();
                d
            };
            let (s1, _, a) = run_cli(command, &cfg, &dir("a"), 1);
            let (s2, _, b) = run_cli(command, &cfg, &dir("b"), 1);
            let (s3, multi, _) = run_cli(command, &cfg, &dir("c"), 4);
            let single: Value = serde_json::from_str(&a).unwrap();
            let diff = max_rel_diff(&single, &multi);
            worst = worst.max(diff);
            let same = a == b && s1 == s2 && s1 == s3 && diff <= THREADED_REL;
            if !same {
                notes.push(format!("{preset} {command}: bit-identical {}, threaded diff {diff:.1e}", a == b));
            }
            ok &= same;
        }
    }
    outcome(
        ok,
        if notes.is_empty() {
            format!("15 command runs bit-identical single-threaded; 4-thread max relative difference {worst:.1e} <= {THREADED_REL:.0e}")
        } else {
            notes.join("; ")
        },
    )
}

fn main() {
    // Ignore harness arguments such as test-name filters.
    let started = Instant::now();
    let p1_ric = riccati(&presets::p1(0.3));
    let p1 = solve_main(presets::p1(0.3), PATHS_MAIN, SEED_MAIN);
    let p2 = solve_main(presets::p2(), PATHS_MAIN, SEED_MAIN);

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("LQ oracle equivalence", Box::new(|| criterion_1(&p1, &p1_ric))),
        ("stationarity", Box::new(|| criterion_2(&p1, &p2))),
        ("contraction", Box::new(|| criterion_3(&p1))),
        ("uniform convexity gap", Box::new(|| criterion_4(&p1, &p2))),
        ("gradient identity", Box::new(criterion_5)),
        ("Hessian identity", Box::new(|| criterion_6(&p1, &p1_ric))),
        ("regular condition", Box::new(|| criterion_7(&p1, &p2))),
        ("dynamic programming", Box::new(|| criterion_8(&p1, &p2, &p1_ric))),
        ("HJB residual", Box::new(|| criterion_9(&p1_ric))),
        ("verification", Box::new(|| criterion_10(&p1, &p1_ric))),
        ("convexity of V", Box::new(criterion_11)),
        ("degenerate cases", Box::new(criterion_12)),
        ("determinism", Box::new(criterion_13)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let clock = Instant::now();
        let o = check();
        if !o.passed {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} ({name}): {} [{:.1}s]",
            if o.passed { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            clock.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed in {:.0}s", criteria.len() - failed, criteria.len(), started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}

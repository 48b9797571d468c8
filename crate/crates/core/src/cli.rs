//! Command dispatch for the `lcflow` binary: every command loads the
//! problem, runs its checks, and writes `report.json`, `tables/*.csv` and
//! `run-metadata.json` into the output directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::descent::{solve_hamiltonian, uniform_convexity_gap, HamiltonianSolution};
use crate::error::{LcfError, Result};
use crate::feedback::{
    continuity_probe, feedback_map, growth_audit, infimum_check, minimize_hamiltonian_in_u, open_loop_agreement,
    verify_optimality, FeedbackQuery,
};
use crate::fitted::{FittedSource, LatticeSource};
use crate::paths::{generate_brownian, BrownianEnsemble, TimeGrid};
use crate::problem::{validate_problem, CertificateMode, ProblemSpec, SampleBox};
use crate::riccati::{lq_value, solve_riccati_ode, RiccatiSolution};
use crate::value::{
    convexity_probe, dpp_gap, hjb_residual, regularity_margin, value_from_solution, write_value_surface,
    BudgetFactors, Continuation, HjbConfig, OracleSource, SolverSource, ValueOptions, ValueSource,
};
use crate::variational::{freeze_second_order, solve_linear_hamiltonian};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Solve,
    Value,
    Feedback,
    VerifyLq,
    HjbCheck,
    DppCheck,
    ConvexityCheck,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Value => "value",
            Command::Feedback => "feedback",
            Command::VerifyLq => "verify-lq",
            Command::HjbCheck => "hjb-check",
            Command::DppCheck => "dpp-check",
            Command::ConvexityCheck => "convexity-check",
            Command::Validate => "validate",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CONTRACT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// One pass/fail line of a report.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance, passed: value <= tolerance }
    }

    pub fn at_least(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance, passed: value >= tolerance }
    }

    pub fn flag(name: impl Into<String>, passed: bool) -> Self {
        Self { name: name.into(), value: passed as u8 as f64, tolerance: 1.0, passed }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub problem: String,
    pub config_hash: String,
    pub passed: bool,
    pub error: Option<String>,
    pub checks: Vec<Check>,
    pub details: Value,
}

/// Everything a command needs besides its own checks.
pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub spec: ProblemSpec,
    pub grid: TimeGrid,
    pub t0: f64,
    pub x0: Vec<f64>,
    tables: Option<PathBuf>,
}

impl Context<'_> {
    fn noise(&self) -> Result<BrownianEnsemble> {
        let mc = &self.cfg.monte_carlo;
        generate_brownian(self.grid, mc.paths, self.spec.dims.d, mc.seed, mc.antithetic)
    }

    fn options(&self, hessian: bool) -> ValueOptions {
        ValueOptions { basis: self.cfg.basis, descent: self.cfg.descent, hessian }
    }

    fn oracle(&self) -> Result<Option<RiccatiSolution>> {
        if !self.spec.is_lq() {
            return Ok(None);
        }
        solve_riccati_ode(&self.spec, self.grid, self.cfg.checks.riccati_substeps).map(Some)
    }

    fn table(&self, name: &str) -> Option<PathBuf> {
        self.tables.as_ref().map(|d| d.join(name))
    }

    fn solve_open(&self, noise: &BrownianEnsemble) -> Result<HamiltonianSolution> {
        solve_hamiltonian(&self.spec, self.t0, &self.x0, noise, self.cfg.basis, &self.cfg.descent)
    }
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn names(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}{i}")).collect()
}

type Outcome = (Vec<Check>, Value);

/// Exit status and, when the command got far enough to write one, the report.
pub struct RunOutcome {
    pub status: i32,
    pub report: Option<Report>,
}

impl RunOutcome {
    fn usage() -> Self {
        Self { status: EXIT_USAGE, report: None }
    }
}

/// Runs `command` and writes its artifacts into `out`. The status is 0 when
/// every check passes, 1 on contract failure (including numerical errors,
/// which are recorded in the report) and 2 on usage errors.
pub fn run(command: Command, cfg: &RunConfig, out: &Path) -> RunOutcome {
    let clock = Instant::now();
    if let Some(c) = &cfg.command {
        if c != command.name() {
            eprintln!("error: config is for command {c:?}, not {:?}", command.name());
            return RunOutcome::usage();
        }
    }
    let tables = out.join("tables");
    if let Err(e) = std::fs::create_dir_all(&tables) {
        eprintln!("error: cannot create {}: {e}", tables.display());
        return RunOutcome::usage();
    }
    let spec = match cfg.load_problem() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return RunOutcome::usage();
        }
    };
    let setup = (|| -> Result<Context<'_>> {
        let grid = cfg.grid(&spec)?;
        grid.index_of(cfg.start.t0)?;
        let x0 = cfg.x0(&spec)?;
        Ok(Context {
            cfg,
            spec: spec.clone(),
            grid,
            t0: cfg.start.t0,
            x0,
            tables: cfg.writes_csv().then(|| tables.clone()),
        })
    })();
    let ctx = match setup {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return RunOutcome::usage();
        }
    };

    let result = match command {
        Command::Solve => cmd_solve(&ctx),
        Command::Value => cmd_value(&ctx),
        Command::Feedback => cmd_feedback(&ctx),
        Command::VerifyLq => cmd_verify_lq(&ctx),
        Command::HjbCheck => cmd_hjb(&ctx),
        Command::DppCheck => cmd_dpp(&ctx),
        Command::ConvexityCheck => cmd_convexity(&ctx),
        Command::Validate => cmd_validate(&ctx),
    };
    let (checks, details, error, usage) = match result {
        Ok((checks, details)) => (checks, details, None, false),
        Err(e) => {
            let usage = matches!(e, LcfError::Argument(_) | LcfError::Structural(_));
            let details = match &e {
                LcfError::Convergence { iterations, final_residual, history } => json!({
                    "iterations": iterations,
                    "final_residual": final_residual,
                    "history": history,
                }),
                _ => Value::Null,
            };
            (Vec::new(), details, Some(e.to_string()), usage)
        }
    };
    let passed = error.is_none() && checks.iter().all(|c| c.passed);
    let report = Report {
        command: command.name().to_string(),
        problem: spec.label.clone(),
        config_hash: cfg.hash(),
        passed,
        error: error.clone(),
        checks,
        details,
    };
    let status = if usage {
        EXIT_USAGE
    } else if passed {
        EXIT_PASS
    } else {
        EXIT_CONTRACT
    };
    let metadata = json!({
        "command": command.name(),
        "config": cfg,
        "config_hash": cfg.hash(),
        "lcflow_version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.monte_carlo.seed,
        "paths": cfg.monte_carlo.paths,
        "steps": cfg.grid.steps,
        "threads": rayon::current_num_threads(),
        "wall_time_s": clock.elapsed().as_secs_f64(),
        "exit_code": status,
    });
    let write = || -> Result<()> {
        std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        std::fs::write(out.join("run-metadata.json"), serde_json::to_string_pretty(&metadata)?)?;
        Ok(())
    };
    if let Err(e) = write() {
        eprintln!("error: cannot write reports: {e}");
        return RunOutcome::usage();
    }
    RunOutcome { status, report: Some(report) }
}

fn cmd_validate(ctx: &Context<'_>) -> Result<Outcome> {
    let report = validate_problem(&ctx.spec, SampleBox::default(), ctx.cfg.checks.validation_samples)?;
    let checks = report
        .checks
        .iter()
        .map(|c| Check { name: c.name.clone(), value: c.worst_margin, tolerance: 0.0, passed: c.passed })
        .collect();
    if let Some(path) = ctx.table("validation.csv") {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["check", "passed", "worst_margin"])?;
        for c in &report.checks {
            w.write_record([c.name.clone(), c.passed.to_string(), c.worst_margin.to_string()])?;
        }
        w.flush()?;
    }
    Ok((checks, serde_json::to_value(&report)?))
}

fn cmd_solve(ctx: &Context<'_>) -> Result<Outcome> {
    let noise = ctx.noise()?;
    let sol = ctx.solve_open(&noise)?;
    let rep = &sol.report;
    let delta = ctx.spec.certificate.delta;
    let mut checks = vec![
        Check::flag("descent converged", rep.converged),
        Check::at_most("stationarity residual", rep.stationarity_residual, ctx.cfg.descent.tol_grad),
    ];
    if let Some(bound) = rep.contraction_bound(delta) {
        checks.push(Check::at_most("max contraction ratio", rep.max_contraction_ratio(), bound + 0.05));
    }
    let oracle = ctx.oracle()?;
    let v_oracle = match &oracle {
        Some(ric) => Some(lq_value(ric, ctx.t0, &ctx.x0)?.v),
        None => None,
    };
    if let Some(ric) = &oracle {
        if let Some(path) = ctx.table("riccati.csv") {
            ric.write_csv(path)?;
        }
    }
    if let Some(path) = ctx.table("iterations.csv") {
        let rows: Vec<Vec<f64>> =
            rep.iterations.iter().map(|r| vec![r.iter as f64, r.grad_norm, r.step_norm, r.cost]).collect();
        write_rows(&path, &["iter", "grad_norm", "step_norm", "cost"].map(String::from), &rows)?;
    }
    if let Some(path) = ctx.table("mean_path.csv") {
        let (n, m) = (ctx.spec.dims.n, ctx.spec.dims.m);
        let mut header = vec!["t".to_string()];
        header.extend(names("x", n));
        header.extend(names("y", n));
        header.extend(names("u", m));
        let grid = sol.x.grid;
        let rows: Vec<Vec<f64>> = (0..=grid.steps)
            .map(|k| {
                let mut r = vec![grid.node(k)];
                r.extend(sol.x.values.mean_at(k));
                r.extend(sol.adjoint.y.mean_at(k));
                if k < grid.steps {
                    r.extend(sol.u.values.mean_at(k));
                } else {
                    r.extend(std::iter::repeat_n(f64::NAN, m));
                }
                r
            })
            .collect();
        write_rows(&path, &header, &rows)?;
    }
    let details = json!({
        "t0": sol.t0,
        "x0": sol.x0,
        "cost": sol.cost,
        "descent": rep,
        "contraction_bound": rep.contraction_bound(delta),
        "max_contraction_ratio": rep.max_contraction_ratio(),
        "riccati_value": v_oracle,
        "max_regression_condition": sol.adjoint.diagnostics.max_condition(),
    });
    Ok((checks, details))
}

/// `max(2Δt|V| + 0.002, 4s/√M)`: the tolerance for a Monte Carlo cost
/// against an exact value.
fn cost_tolerance(dt: f64, v: f64, std: f64, paths: usize) -> f64 {
    (2.0 * dt * v.abs() + 0.002).max(4.0 * std / (paths as f64).sqrt())
}

fn cmd_value(ctx: &Context<'_>) -> Result<Outcome> {
    let noise = ctx.noise()?;
    let oracle = ctx.oracle()?;
    let opts = ctx.options(true);
    let checks_cfg = &ctx.cfg.checks;
    let mut checks = Vec::new();
    let mut samples = Vec::new();
    let mut margins = Vec::new();
    for &t in &ctx.cfg.times(&ctx.grid)? {
        if t >= ctx.grid.t_end - 1e-12 {
            continue;
        }
        for x in ctx.cfg.points(&ctx.spec)? {
            let sol = solve_hamiltonian(&ctx.spec, t, &x, &noise, opts.basis, &opts.descent)?;
            let (s, _) = value_from_solution(&ctx.spec, &sol, &opts)?;
            let tag = format!("(t={t}, x={x:?})");
            let asym = s.diagnostics.hessian_asymmetry.unwrap_or(0.0);
            checks.push(Check::at_most(format!("Hessian asymmetry {tag}"), asym, 0.05));
            let reg = regularity_margin(
                &ctx.spec,
                &s,
                checks_cfg.regularity_u_box,
                checks_cfg.regularity_samples,
                ctx.cfg.monte_carlo.seed,
                checks_cfg.regularity_tolerance,
            )?;
            checks.push(Check::at_least(format!("regular margin {tag}"), reg.margin, reg.delta - reg.tolerance));
            if let Some(ric) = &oracle {
                let exact = lq_value(ric, t, &x)?;
                let tol = cost_tolerance(ctx.grid.dt(), exact.v, sol.cost.std, sol.x.paths());
                checks.push(Check::at_most(format!("|V - V_riccati| {tag}"), (s.v - exact.v).abs(), tol));
                let dv_err = s.dv.iter().zip(&exact.dv).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let dv_scale = exact.dv.iter().fold(1.0f64, |a, b| a.max(b.abs()));
                checks.push(Check::at_most(format!("|DxV - DxV_riccati| {tag}"), dv_err, 0.05 * dv_scale));
                let h = s.dvv.as_ref().expect("requested");
                let h_err = h.iter().zip(&exact.dvv).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let h_scale = exact.dvv.iter().fold(1.0f64, |a, b| a.max(b.abs()));
                checks.push(Check::at_most(format!("|DxxV - P| {tag}"), h_err, 0.07 * h_scale));
            }
            margins.push(reg);
            samples.push(s);
        }
    }
    if let Some(path) = ctx.table("value_surface.csv") {
        write_value_surface(path, &samples)?;
    }
    Ok((checks, json!({ "samples": samples, "regularity": margins })))
}

fn cmd_verify_lq(ctx: &Context<'_>) -> Result<Outcome> {
    let Some(ric) = ctx.oracle()? else {
        return Err(LcfError::Argument(format!("verify-lq needs an LQ problem, {} is not", ctx.spec.label)));
    };
    let noise = ctx.noise()?;
    let n = ctx.spec.dims.n;
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for x in ctx.cfg.points(&ctx.spec)? {
        let sol = solve_hamiltonian(&ctx.spec, ctx.t0, &x, &noise, ctx.cfg.basis, &ctx.cfg.descent)?;
        let exact = lq_value(&ric, ctx.t0, &x)?;
        let tol = cost_tolerance(ctx.grid.dt(), exact.v, sol.cost.std, sol.x.paths());
        let err = (sol.cost.mean - exact.v).abs();
        let y0 = sol.adjoint.y.mean_at(0);
        let y_err = y0.iter().zip(&exact.dv).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let y_tol = 0.05 * exact.dv.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        checks.push(Check::at_most(format!("|J - V| at x={x:?}"), err, tol));
        checks.push(Check::at_most(format!("|Y0 - DxV| at x={x:?}"), y_err, y_tol));
        checks.push(Check::flag(format!("converged at x={x:?}"), sol.report.converged));
        let mut r = x.clone();
        r.extend([sol.cost.mean, sol.cost.stderr, exact.v, err, tol]);
        r.extend(&y0);
        r.extend(&exact.dv);
        rows.push(r);
        details.push(json!({
            "x": x,
            "j_solver": sol.cost,
            "v_riccati": exact.v,
            "iterations": sol.report.iterations.len() - 1,
            "y0": y0,
            "dv_riccati": exact.dv,
        }));
    }
    if let Some(path) = ctx.table("verify_lq.csv") {
        let mut header = names("x", n);
        header.extend(["J", "J_stderr", "V_riccati", "abs_error", "tolerance"].map(String::from));
        header.extend(names("Y0_", n));
        header.extend(names("DxV_", n));
        write_rows(&path, &header, &rows)?;
    }
    if let Some(path) = ctx.table("riccati.csv") {
        ric.write_csv(path)?;
    }
    Ok((checks, json!({ "rows": details })))
}

fn cmd_hjb(ctx: &Context<'_>) -> Result<Outcome> {
    let h_t = ctx.cfg.h_t(&ctx.grid);
    let cfg = HjbConfig { h_t, h_x: ctx.cfg.checks.h_x, dt: ctx.grid.dt(), factor: ctx.cfg.checks.hjb_factor };
    let mut samples = Vec::new();
    for &t in &ctx.cfg.times(&ctx.grid)? {
        if t + h_t > ctx.spec.horizon + 1e-12 {
            continue;
        }
        for x in ctx.cfg.points(&ctx.spec)? {
            samples.push((t, x));
        }
    }
    let oracle = ctx.oracle()?;
    let noise;
    let report = match oracle {
        Some(ric) if ctx.cfg.checks.prefer_oracle => {
            hjb_residual(&ctx.spec, &OracleSource { ric }, &samples, &cfg, &ctx.cfg.checks.newton)?
        }
        _ => {
            noise = ctx.noise()?;
            let src = SolverSource { spec: &ctx.spec, noise: &noise, opts: ctx.options(true) };
            hjb_residual(&ctx.spec, &src, &samples, &cfg, &ctx.cfg.checks.newton)?
        }
    };
    let checks = report
        .points
        .iter()
        .map(|p| Check::at_most(format!("|HJB residual| at (t={}, x={:?})", p.t, p.x), p.residual.abs(), p.tolerance))
        .collect();
    if let Some(path) = ctx.table("hjb.csv") {
        report.write_csv(path)?;
    }
    Ok((checks, serde_json::to_value(&report)?))
}

fn cmd_dpp(ctx: &Context<'_>) -> Result<Outcome> {
    let noise = ctx.noise()?;
    let oracle = ctx.oracle()?;
    let opts = ctx.options(false);
    let base = ctx.cfg.checks.budget;
    let mut checks = Vec::new();
    let mut reports = Vec::new();
    for x in ctx.cfg.points(&ctx.spec)? {
        let (cont, budget) = match &oracle {
            Some(ric) => (Continuation::Oracle(ric), base),
            None => (Continuation::Fitted, BudgetFactors { overall: base.overall * ctx.cfg.checks.fitted_factor, ..base }),
        };
        let r = dpp_gap(&ctx.spec, ctx.t0, &x, ctx.cfg.checks.dpp_step, &noise, &opts, cont, &budget)?;
        checks.push(Check::at_most(format!("|DPP gap| at x={x:?} ({})", r.continuation), r.gap.abs(), r.tolerance));
        reports.push(r);
    }
    if let Some(path) = ctx.table("dpp.csv") {
        let n = ctx.spec.dims.n;
        let mut header = names("x", n);
        header.extend(["V", "running", "continuation", "gap", "stderr", "tolerance"].map(String::from));
        let rows: Vec<Vec<f64>> = reports
            .iter()
            .map(|r| {
                let mut row = r.x.clone();
                row.extend([r.value, r.running_cost, r.continuation_value, r.gap, r.stderr, r.tolerance]);
                row
            })
            .collect();
        write_rows(&path, &header, &rows)?;
    }
    Ok((checks, json!({ "step": ctx.cfg.checks.dpp_step, "points": reports })))
}

fn cmd_convexity(ctx: &Context<'_>) -> Result<Outcome> {
    let noise = ctx.noise()?;
    let c = &ctx.cfg.checks;
    let sol = ctx.solve_open(&noise)?;
    let gap = uniform_convexity_gap(&ctx.spec, &sol, ctx.cfg.basis, c.uniform_convexity_trials, c.uniform_convexity_seed)?;
    let delta = ctx.spec.certificate.delta;
    let mut checks = vec![Check::at_least("uniform convexity gap of J", gap, delta - c.convexity_tolerance)];
    let probe = if ctx.spec.certificate.mode == CertificateMode::Case1 {
        let pairs = match &c.convexity_pairs {
            Some(p) => p.clone(),
            None => vec![(ctx.x0.iter().map(|v| v - 1.0).collect(), ctx.x0.iter().map(|v| v + 1.0).collect())],
        };
        let rep = convexity_probe(&ctx.spec, ctx.t0, &pairs, &c.convexity_lambdas, &noise, &ctx.options(false), c.convexity_stderr_factor)?;
        for r in &rep.rows {
            checks.push(Check::at_least(
                format!("convexity gap of V, x0={:?}, x1={:?}, lambda={}", r.x0, r.x1, r.lambda),
                r.gap,
                -c.convexity_stderr_factor * r.stderr,
            ));
        }
        if let Some(path) = ctx.table("convexity.csv") {
            let n = ctx.spec.dims.n;
            let mut header = names("x0_", n);
            header.extend(names("x1_", n));
            header.extend(["lambda", "gap", "stderr"].map(String::from));
            let rows: Vec<Vec<f64>> = rep
                .rows
                .iter()
                .map(|r| {
                    let mut row = r.x0.clone();
                    row.extend(&r.x1);
                    row.extend([r.lambda, r.gap, r.stderr]);
                    row
                })
                .collect();
            write_rows(&path, &header, &rows)?;
        }
        Some(rep)
    } else {
        None
    };
    Ok((checks, json!({ "uniform_gap": gap, "delta": delta, "probe": probe })))
}

fn cmd_feedback(ctx: &Context<'_>) -> Result<Outcome> {
    let noise = ctx.noise()?;
    let c = &ctx.cfg.checks;
    let spec = &ctx.spec;
    let newton = &c.newton;
    let open = ctx.solve_open(&noise)?;
    let oracle = ctx.oracle()?;
    let mut extra = json!({});
    let source: Box<dyn ValueSource> = match oracle {
        Some(ric) if c.prefer_oracle => Box::new(OracleSource { ric }),
        _ => {
            let frozen = freeze_second_order(spec, &open)?;
            let deriv = solve_linear_hamiltonian(spec, &open, &frozen, ctx.cfg.basis, &ctx.cfg.descent)?;
            let (fitted, skipped) = FittedSource::new(spec, &open, &deriv, ctx.cfg.basis, c.lattice_box_sd)?;
            let lattice = LatticeSource::new(fitted, c.lattice_spacing)?;
            extra = json!({
                "lattice_spacing": lattice.spacing(),
                "lattice_refinement_error": lattice.refinement_error,
                "singular_derivative_samples": skipped,
            });
            Box::new(lattice)
        }
    };
    let source = source.as_ref();

    let agreement = open_loop_agreement(spec, &open, source, newton)?;
    let verification = verify_optimality(spec, &open, source, newton, &c.verification)?;
    let mut checks = vec![
        Check::at_most("open-loop vs feedback relative L2", agreement, c.agreement_tolerance),
        Check::at_most("|J_closed - J_open|", verification.gap_closed_open.abs(), verification.tolerance),
        Check::at_most("|J_closed - V|", verification.gap_closed_value.abs(), verification.tolerance),
    ];
    for (i, p) in verification.perturbed.iter().enumerate() {
        checks.push(Check::at_least(format!("perturbed loop {i}: J"), p.cost.mean, verification.value - verification.tolerance));
    }
    if let Some(w) = &verification.wrong_gain {
        checks.push(Check::at_least("wrong-gain loop excess over optimal", w.excess, c.verification.mc_factor * w.excess_stderr));
    }

    // Newton residual and direct infimum at the query points.
    let mut worst_residual = 0.0f64;
    let mut inf_ok = true;
    let times = ctx.cfg.times(&ctx.grid)?;
    for &t in &times {
        for x in ctx.cfg.points(spec)? {
            let (dv, dvv) = source.derivatives(t, &x)?;
            let q = FeedbackQuery::assemble(spec, t, &x, &dv, &dvv);
            let out = minimize_hamiltonian_in_u(spec, &q, newton)?;
            worst_residual = worst_residual.max(out.residual / (1.0 + q.p.norm()));
            inf_ok &= infimum_check(spec, &q, &out.u, 50, 1.0, ctx.cfg.monte_carlo.seed);
        }
    }
    checks.push(Check::at_most("Newton residual / (1 + |p|)", worst_residual, newton.tol));
    checks.push(Check::flag("Hamiltonian infimum over 50 random controls", inf_ok));
    let growth = growth_audit(spec, ctx.t0, 1000, 5.0, ctx.cfg.monte_carlo.seed, newton)?;
    checks.push(Check::flag("growth constant finite", growth.fitted_constant.is_finite()));
    let lipschitz = continuity_probe(spec, ctx.t0, 200, 1e-3, ctx.cfg.monte_carlo.seed, newton)?;
    checks.push(Check::flag("feedback Lipschitz ratio finite", lipschitz.is_finite()));

    if let Some(path) = ctx.table("feedback_field.csv") {
        let (n, m) = (spec.dims.n, spec.dims.m);
        let stride = (ctx.grid.steps / 10).max(1);
        let points = ctx.cfg.points(spec)?;
        let xs: Vec<Vec<f64>> = if n == 1 {
            let lo = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let hi = points.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            (0..=20).map(|i| vec![lo + (hi - lo) * i as f64 / 20.0]).collect()
        } else {
            points
        };
        let mut rows = Vec::new();
        for k in (0..ctx.grid.steps).step_by(stride) {
            let t = ctx.grid.node(k);
            if t < ctx.t0 - 1e-12 {
                continue;
            }
            for x in &xs {
                let mut row = vec![t];
                row.extend(x);
                row.extend(feedback_map(spec, source, t, x, newton)?);
                rows.push(row);
            }
        }
        let mut header = vec!["t".to_string()];
        header.extend(names("x", n));
        header.extend(names("u", m));
        write_rows(&path, &header, &rows)?;
    }
    if let Some(path) = ctx.table("verification.csv") {
        let mut header = vec!["loop".to_string()];
        header.extend(["J", "J_stderr", "excess", "excess_stderr", "exact_cost"].map(String::from));
        let mut rows: Vec<Vec<f64>> = verification
            .perturbed
            .iter()
            .enumerate()
            .map(|(i, p)| vec![i as f64, p.cost.mean, p.cost.stderr, p.excess, p.excess_stderr, p.exact_cost.unwrap_or(f64::NAN)])
            .collect();
        if let Some(w) = &verification.wrong_gain {
            rows.push(vec![-1.0, w.cost.mean, w.cost.stderr, w.excess, w.excess_stderr, w.exact_cost.unwrap_or(f64::NAN)]);
        }
        write_rows(&path, &header, &rows)?;
    }
    Ok((
        checks,
        json!({
            "source": source.label(),
            "open_loop_agreement": agreement,
            "verification": verification,
            "growth": growth,
            "lipschitz_ratio": lipschitz,
            "lattice": extra,
        }),
    ))
}

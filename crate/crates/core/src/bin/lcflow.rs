use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use lcflow::cli::{run, Command, EXIT_USAGE};
use lcflow::config::RunConfig;

/// Gradient-descent solver and verification suite for stochastic
/// linear-convex control problems.
#[derive(Parser)]
#[command(name = "lcflow", version)]
struct Args {
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Output directory; `LCFLOW_OUT` takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `monte_carlo.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let mut cfg = match RunConfig::from_path(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    if let Some(seed) = args.seed {
        cfg.monte_carlo.seed = seed;
    }
    let out = std::env::var_os("LCFLOW_OUT")
        .map(PathBuf::from)
        .or(args.out)
        .unwrap_or_else(|| cfg.output.directory.clone());
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = args.threads {
        builder = builder.num_threads(t);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    let outcome = pool.install(|| run(args.command, &cfg, &out));
    if let Some(report) = &outcome.report {
        for c in &report.checks {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            println!("{verdict} {} = {:.6e} (tolerance {:.6e})", c.name, c.value, c.tolerance);
        }
        if let Some(e) = &report.error {
            eprintln!("error: {e}");
        }
        println!("report written to {}", out.join("report.json").display());
    }
    ExitCode::from(outcome.status as u8)
}

//! Pointwise samples of `V`, `DₓV`, `D²ₓₓV` and the checks built on them:
//! HJB residual, dynamic programming gap, regular-condition margin and
//! convexity in `x`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::CostDerivatives;
use crate::descent::{solve_hamiltonian, DescentConfig, HamiltonianSolution};
use crate::error::{argument, LcfError, Result};
use crate::feedback::{minimize_hamiltonian_in_u, FeedbackQuery, NewtonConfig};
use crate::linalg::{det_sum, mean_std, min_eigenvalue, symmetrize};
use crate::paths::BrownianEnsemble;
use crate::problem::ProblemSpec;
use crate::regression::{Design, RegressionBasis};
use crate::riccati::{lq_value, RiccatiSolution};
use crate::variational::{freeze_second_order, hessian_from_derivative, solve_linear_hamiltonian, DerivativeSolution};

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValueDiagnostics {
    pub descent_iterations: usize,
    pub stationarity_residual: f64,
    pub hessian_asymmetry: Option<f64>,
    pub hessian_cross_path_std: Option<f64>,
    pub variational_iterations: Vec<usize>,
}

/// `V`, `DₓV` and (optionally) `D²ₓₓV` at one point.
#[derive(Debug, Clone, Serialize)]
pub struct ValueSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: f64,
    pub dv: Vec<f64>,
    /// Row-major `n×n`, symmetric.
    pub dvv: Option<Vec<f64>>,
    pub stderr_v: f64,
    /// Largest cross-path standard deviation of `Ȳ` at the initial node.
    pub dv_cross_path_std: f64,
    pub diagnostics: ValueDiagnostics,
}

impl ValueSample {
    pub fn hessian(&self) -> Result<DMatrix<f64>> {
        let n = self.x.len();
        self.dvv
            .as_ref()
            .map(|h| DMatrix::from_row_slice(n, n, h))
            .ok_or_else(|| argument("this value sample carries no Hessian"))
    }
}

/// Anything that can report `V` and its `x`-derivatives at a point.
pub trait ValueSource: Sync {
    fn label(&self) -> &str;

    fn sample(&self, t: f64, x: &[f64]) -> Result<ValueSample>;

    fn derivatives(&self, t: f64, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let s = self.sample(t, x)?;
        let h = s.hessian()?;
        Ok((s.dv, h))
    }

    /// `(K(t), k₀(t))` when the induced feedback is exactly `u = K x + k₀`.
    fn affine_feedback(&self, _spec: &ProblemSpec) -> Option<AffineFeedback<'_>> {
        None
    }
}

pub type AffineFeedback<'a> = Box<dyn Fn(f64) -> (DMatrix<f64>, DVector<f64>) + Sync + 'a>;

/// The Riccati oracle as a value source.
pub struct OracleSource {
    pub ric: RiccatiSolution,
}

impl ValueSource for OracleSource {
    fn label(&self) -> &str {
        "riccati"
    }

    fn sample(&self, t: f64, x: &[f64]) -> Result<ValueSample> {
        let v = lq_value(&self.ric, t, x)?;
        Ok(ValueSample {
            t,
            x: x.to_vec(),
            v: v.v,
            dv: v.dv,
            dvv: Some(v.dvv),
            stderr_v: 0.0,
            dv_cross_path_std: 0.0,
            diagnostics: ValueDiagnostics::default(),
        })
    }

    fn affine_feedback(&self, spec: &ProblemSpec) -> Option<AffineFeedback<'_>> {
        spec.is_lq().then(|| Box::new(move |t| (self.ric.gain_at(t), self.ric.offset_at(t))) as AffineFeedback<'_>)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueOptions {
    pub basis: RegressionBasis,
    pub descent: DescentConfig,
    /// Also solve the variational system for `D²ₓₓV`.
    pub hessian: bool,
}

impl Default for ValueOptions {
    fn default() -> Self {
        Self { basis: RegressionBasis::default(), descent: DescentConfig::default(), hessian: true }
    }
}

/// Solves the Hamiltonian system from every queried point on a shared noise
/// ensemble (restricted to the query time).
pub struct SolverSource<'a> {
    pub spec: &'a ProblemSpec,
    pub noise: &'a BrownianEnsemble,
    pub opts: ValueOptions,
}

impl ValueSource for SolverSource<'_> {
    fn label(&self) -> &str {
        "solver"
    }

    fn sample(&self, t: f64, x: &[f64]) -> Result<ValueSample> {
        evaluate_value(self.spec, t, x, self.noise, &self.opts)
    }
}

/// Runs the descent from `(t, x)` and reads off the value sample.
pub fn evaluate_value(spec: &ProblemSpec, t: f64, x: &[f64], noise: &BrownianEnsemble, opts: &ValueOptions) -> Result<ValueSample> {
    if t < noise.grid.t0 - 1e-12 || t >= noise.grid.t_end - 1e-12 {
        return Err(argument(format!("value queries need t in [{}, {}), got {t}", noise.grid.t0, noise.grid.t_end)));
    }
    let sol = solve_hamiltonian(spec, t, x, noise, opts.basis, &opts.descent)?;
    Ok(value_from_solution(spec, &sol, opts)?.0)
}

/// `V = J(ū)`, `DₓV = Ȳ_t` (cross-path mean) and, when requested,
/// `D²ₓₓV = ∇Y_t` from the variational system.
pub fn value_from_solution(
    spec: &ProblemSpec,
    sol: &HamiltonianSolution,
    opts: &ValueOptions,
) -> Result<(ValueSample, Option<DerivativeSolution>)> {
    let n = spec.dims.n;
    let y = &sol.adjoint.y;
    let paths = y.paths;
    let mut dv = vec![0.0; n];
    let mut dv_std = 0.0f64;
    for (j, slot) in dv.iter_mut().enumerate() {
        let col: Vec<f64> = (0..paths).map(|p| y.at(p, 0)[j]).collect();
        let (mu, sd) = mean_std(&col);
        *slot = mu;
        dv_std = dv_std.max(sd);
    }
    let mut diagnostics = ValueDiagnostics {
        descent_iterations: sol.report.iterations.len() - 1,
        stationarity_residual: sol.report.stationarity_residual,
        ..Default::default()
    };
    let (dvv, deriv) = if opts.hessian {
        let frozen = freeze_second_order(spec, sol)?;
        let deriv = solve_linear_hamiltonian(spec, sol, &frozen, opts.basis, &opts.descent)?;
        let h = hessian_from_derivative(&deriv)?;
        diagnostics.hessian_asymmetry = Some(h.asymmetry);
        diagnostics.hessian_cross_path_std = Some(h.cross_path_std);
        diagnostics.variational_iterations = deriv.reports.iter().map(|r| r.iterations.len() - 1).collect();
        (Some(h.matrix), Some(deriv))
    } else {
        (None, None)
    };
    let sample = ValueSample {
        t: sol.t0,
        x: sol.x0.clone(),
        v: sol.cost.mean,
        dv,
        dvv,
        stderr_v: sol.cost.stderr,
        dv_cross_path_std: dv_std,
        diagnostics,
    };
    Ok((sample, deriv))
}

/// CSV rows `t, x…, V, DxV…, DxxV…, stderr` (Hessian row-major, blank when
/// absent).
pub fn write_value_surface(path: impl AsRef<Path>, samples: &[ValueSample]) -> Result<()> {
    let n = samples.first().map_or(0, |s| s.x.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.push("V".into());
    header.extend((0..n).map(|i| format!("DxV{i}")));
    header.extend((0..n * n).map(|i| format!("DxxV{}{}", i / n, i % n)));
    header.push("stderr".into());
    w.write_record(&header)?;
    for s in samples {
        let mut rec = vec![s.t.to_string()];
        rec.extend(s.x.iter().map(|v| v.to_string()));
        rec.push(s.v.to_string());
        rec.extend(s.dv.iter().map(|v| v.to_string()));
        match &s.dvv {
            Some(h) => rec.extend(h.iter().map(|v| v.to_string())),
            None => rec.extend(std::iter::repeat_n(String::new(), n * n)),
        }
        rec.push(s.stderr_v.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `(𝓛V)(t,x) = ⟨DₓV, Ax + b⟩ + ½ Σ ⟨D²ₓₓV (Cᵢx + σᵢ), Cᵢx + σᵢ⟩`.
pub fn generator(spec: &ProblemSpec, t: f64, x: &[f64], dv: &[f64], dvv: &DMatrix<f64>) -> f64 {
    let c = spec.coeffs.at(t);
    let xv = DVector::from_column_slice(x);
    let drift = c.a * &xv + c.drift.column(0);
    let mut out = DVector::from_column_slice(dv).dot(&drift);
    for i in 0..c.noise_dim {
        let v = c.c[i] * &xv + c.sigma[i].column(0);
        out += 0.5 * (dvv * &v).dot(&v);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HjbConfig {
    /// Time step of the `∂ₜV` difference quotient.
    pub h_t: f64,
    /// When set, adds a spatial difference check of `DₓV` with this step.
    pub h_x: Option<f64>,
    /// Grid step of the underlying solver (enters the budget).
    pub dt: f64,
    /// Budget multiplier.
    pub factor: f64,
}

impl HjbConfig {
    pub fn for_grid(dt: f64) -> Self {
        Self { h_t: 2.0 * dt, h_x: None, dt, factor: 5.0 }
    }
}

impl Default for HjbConfig {
    fn default() -> Self {
        Self::for_grid(0.02)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HjbPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: f64,
    pub time_derivative: f64,
    pub generator: f64,
    pub hamiltonian: f64,
    /// `time_derivative + generator + hamiltonian`.
    pub residual: f64,
    pub minimizer: Vec<f64>,
    pub h_t: f64,
    pub one_sided: bool,
    /// Monte Carlo error of the time derivative.
    pub mc_error: f64,
    pub tolerance: f64,
    /// Largest `|DₓV − spatial difference|` when `h_x` is set.
    pub gradient_mismatch: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HjbResidualReport {
    pub source: String,
    pub points: Vec<HjbPoint>,
    pub max_abs_residual: f64,
    pub passed: bool,
}

impl HjbResidualReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let n = self.points.first().map_or(0, |p| p.x.len());
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend(
            ["V", "dVdt", "LV", "H", "residual", "tolerance", "passed"]
                .iter()
                .map(|s| s.to_string()),
        );
        w.write_record(&header)?;
        for p in &self.points {
            let mut rec = vec![p.t.to_string()];
            rec.extend(p.x.iter().map(|v| v.to_string()));
            for v in [p.v, p.time_derivative, p.generator, p.hamiltonian, p.residual, p.tolerance] {
                rec.push(v.to_string());
            }
            rec.push(p.passed.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `∂ₜV + 𝓛V + H` at each sample, with `∂ₜV` from a central difference in
/// time (forward at the initial time).
pub fn hjb_residual(
    spec: &ProblemSpec,
    source: &dyn ValueSource,
    samples: &[(f64, Vec<f64>)],
    cfg: &HjbConfig,
    newton: &NewtonConfig,
) -> Result<HjbResidualReport> {
    if !(cfg.h_t > 0.0) || cfg.h_x.is_some_and(|h| !(h > 0.0)) {
        return Err(argument("difference steps must be positive"));
    }
    let mut points = Vec::with_capacity(samples.len());
    for (t, x) in samples {
        let t = *t;
        if t + cfg.h_t > spec.horizon + 1e-12 {
            return Err(argument(format!("t = {t} is too close to the horizon for h_t = {}", cfg.h_t)));
        }
        let centre = source.sample(t, x)?;
        let dvv = centre.hessian()?;
        let ahead = source.sample(t + cfg.h_t, x)?;
        let one_sided = t - cfg.h_t < -1e-12;
        let (time_derivative, mc_error) = if one_sided {
            (
                (ahead.v - centre.v) / cfg.h_t,
                (ahead.stderr_v.powi(2) + centre.stderr_v.powi(2)).sqrt() / cfg.h_t,
            )
        } else {
            let behind = source.sample(t - cfg.h_t, x)?;
            (
                (ahead.v - behind.v) / (2.0 * cfg.h_t),
                (ahead.stderr_v.powi(2) + behind.stderr_v.powi(2)).sqrt() / (2.0 * cfg.h_t),
            )
        };
        let lv = generator(spec, t, x, &centre.dv, &dvv);
        let query = FeedbackQuery::assemble(spec, t, x, &centre.dv, &dvv);
        let ubar = minimize_hamiltonian_in_u(spec, &query, newton)?;
        let h = query.reduced_hamiltonian(spec, &ubar.u);
        let residual = time_derivative + lv + h;

        let gradient_mismatch = match cfg.h_x {
            None => None,
            Some(hx) => {
                let mut worst = 0.0f64;
                for i in 0..x.len() {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += hx;
                    xm[i] -= hx;
                    let fd = (source.sample(t, &xp)?.v - source.sample(t, &xm)?.v) / (2.0 * hx);
                    worst = worst.max((fd - centre.dv[i]).abs());
                }
                Some(worst)
            }
        };

        let scale = 1.0 + centre.v.abs() + l2(&centre.dv) + dvv.norm();
        let tolerance = cfg.factor * (mc_error + cfg.dt * scale + cfg.h_t * scale);
        points.push(HjbPoint {
            t,
            x: x.clone(),
            v: centre.v,
            time_derivative,
            generator: lv,
            hamiltonian: h,
            residual,
            minimizer: ubar.u,
            h_t: cfg.h_t,
            one_sided,
            mc_error,
            tolerance,
            gradient_mismatch,
            passed: residual.abs() <= tolerance,
        });
    }
    let max_abs_residual = points.iter().map(|p| p.residual.abs()).fold(0.0, f64::max);
    let passed = points.iter().all(|p| p.passed);
    Ok(HjbResidualReport { source: source.label().to_string(), points, max_abs_residual, passed })
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Where `V(t + h, ·)` comes from in the dynamic programming check.
pub enum Continuation<'a> {
    Oracle(&'a RiccatiSolution),
    /// Regression of the realized optimal cost-to-go on `X̄_{t+h}`.
    Fitted,
}

#[derive(Debug, Clone, Serialize)]
pub struct DppReport {
    pub t: f64,
    pub x: Vec<f64>,
    pub h: f64,
    pub continuation: String,
    pub value: f64,
    pub running_cost: f64,
    pub continuation_value: f64,
    /// `V(t,x) − E[V(t+h, X̄) + ∫ l]`.
    pub gap: f64,
    /// Standard error of the per-path difference.
    pub stderr: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetFactors {
    /// Multiplies `Δt · max(1, |V|)`.
    pub discretization: f64,
    /// Multiplies `s / √M`.
    pub monte_carlo: f64,
    /// Overall multiplier (for fitted continuations).
    pub overall: f64,
}

impl Default for BudgetFactors {
    fn default() -> Self {
        Self { discretization: 3.0, monte_carlo: 4.0, overall: 1.0 }
    }
}

/// The dynamic programming gap at `(t, x)` over a step `h` that is a whole
/// number of grid steps.
#[allow(clippy::too_many_arguments)]
pub fn dpp_gap(
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    h: f64,
    noise: &BrownianEnsemble,
    opts: &ValueOptions,
    continuation: Continuation<'_>,
    budget: &BudgetFactors,
) -> Result<DppReport> {
    if !(h > 0.0) || t + h >= spec.horizon - 1e-12 {
        return Err(argument(format!("need 0 < h and t + h < T, got t = {t}, h = {h}")));
    }
    let sol = solve_hamiltonian(spec, t, x, noise, opts.basis, &opts.descent)?;
    dpp_gap_from(spec, &sol, h, opts.basis, continuation, budget)
}

/// As [`dpp_gap`] on an existing solution.
pub fn dpp_gap_from(
    spec: &ProblemSpec,
    sol: &HamiltonianSolution,
    h: f64,
    basis: RegressionBasis,
    continuation: Continuation<'_>,
    budget: &BudgetFactors,
) -> Result<DppReport> {
    let grid = sol.x.grid;
    let j = grid.index_of(grid.t0 + h)?;
    if j == 0 || j >= grid.steps {
        return Err(argument("h must cover at least one step and stop before the horizon"));
    }
    let paths = sol.x.paths();
    let dt = grid.dt();
    let running_to = |p: usize, lo: usize, hi: usize| -> f64 {
        (lo..hi)
            .map(|k| spec.cost.running_value(grid.node(k), sol.x.x(p, k), sol.u.u(p, k)))
            .sum::<f64>()
            * dt
    };
    let running: Vec<f64> = (0..paths).map(|p| running_to(p, 0, j)).collect();
    let th = grid.node(j);
    let (label, cont) = match continuation {
        Continuation::Oracle(ric) => (
            "riccati".to_string(),
            (0..paths).map(|p| lq_value(ric, th, sol.x.x(p, j)).map(|v| v.v)).collect::<Result<Vec<f64>>>()?,
        ),
        Continuation::Fitted => {
            let n = spec.dims.n;
            let to_go: Vec<f64> = (0..paths)
                .map(|p| running_to(p, j, grid.steps) + CostDerivatives::terminal_value(&spec.cost, p, sol.x.x(p, grid.steps)))
                .collect();
            let design = Design::new(basis, sol.x.values.node(j), paths, n, j)?;
            ("fitted".to_string(), design.fit(&to_go, 1).fitted)
        }
    };
    let sample: Vec<f64> = running.iter().zip(&cont).map(|(a, b)| a + b).collect();
    let value = sol.cost.mean;
    let mean_sample = det_sum(paths, |p| sample[p]) / paths as f64;
    let diffs: Vec<f64> = (0..paths).map(|p| sol.path_costs[p] - sample[p]).collect();
    let (_, sd_diff) = mean_std(&diffs);
    let (_, sd) = mean_std(&sample);
    let m = paths as f64;
    let tolerance = budget.overall
        * (budget.discretization * dt * value.abs().max(1.0)).max(budget.monte_carlo * sd / m.sqrt());
    let gap = value - mean_sample;
    Ok(DppReport {
        t: sol.t0,
        x: sol.x0.clone(),
        h,
        continuation: label,
        value,
        running_cost: det_sum(paths, |p| running[p]) / m,
        continuation_value: det_sum(paths, |p| cont[p]) / m,
        gap,
        stderr: sd_diff / m.sqrt(),
        tolerance,
        passed: gap.abs() <= tolerance,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub t: f64,
    pub x: Vec<f64>,
    /// `min_u min-eig[D_uu l + Σ DᵢᵀD²ₓₓV Dᵢ]`.
    pub margin: f64,
    pub worst_u: Vec<f64>,
    pub delta: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Smallest eigenvalue of `D_uu l(t,x,u) + Σ DᵢᵀD²ₓₓV Dᵢ` over `samples`
/// seeded draws of `u` from `[−u_box, u_box]^m` (plus `u = 0`).
pub fn regularity_margin(
    spec: &ProblemSpec,
    sample: &ValueSample,
    u_box: f64,
    samples: usize,
    seed: u64,
    tolerance: f64,
) -> Result<RegularityReport> {
    let dvv = sample.hessian()?;
    let c = spec.coeffs.at(sample.t);
    let m = spec.dims.m;
    let mut curvature = DMatrix::zeros(m, m);
    for i in 0..c.noise_dim {
        curvature += c.d[i].transpose() * &dvv * c.d[i];
    }
    let curvature = symmetrize(&curvature).0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut margin = f64::INFINITY;
    let mut worst_u = vec![0.0; m];
    for s in 0..=samples {
        let u: Vec<f64> = if s == 0 { vec![0.0; m] } else { (0..m).map(|_| rng.random_range(-u_box..=u_box)).collect() };
        let e = min_eigenvalue(&(spec.cost.running_hessian_uu(sample.t, &u) + &curvature));
        if e < margin {
            margin = e;
            worst_u = u;
        }
    }
    let delta = spec.certificate.delta;
    Ok(RegularityReport {
        t: sample.t,
        x: sample.x.clone(),
        margin,
        worst_u,
        delta,
        tolerance,
        passed: margin >= delta - tolerance,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvexityRow {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub lambda: f64,
    /// `λV(x1) + (1−λ)V(x0) − V(λx1 + (1−λ)x0)`.
    pub gap: f64,
    pub stderr: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvexityReport {
    pub t: f64,
    pub rows: Vec<ConvexityRow>,
    pub solves: usize,
    pub passed: bool,
}

/// Midpoint-type convexity gaps of `V(t, ·)`, all solves on common noise so
/// that the stated standard errors are those of per-path combinations.
pub fn convexity_probe(
    spec: &ProblemSpec,
    t: f64,
    pairs: &[(Vec<f64>, Vec<f64>)],
    lambdas: &[f64],
    noise: &BrownianEnsemble,
    opts: &ValueOptions,
    stderr_factor: f64,
) -> Result<ConvexityReport> {
    if lambdas.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(argument("convexity weights must lie in (0, 1)"));
    }
    let mut cache: BTreeMap<Vec<u64>, Vec<f64>> = BTreeMap::new();
    let mut costs = |x: &[f64]| -> Result<Vec<f64>> {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if let Some(c) = cache.get(&key) {
            return Ok(c.clone());
        }
        let sol = solve_hamiltonian(spec, t, x, noise, opts.basis, &opts.descent)?;
        cache.insert(key, sol.path_costs.clone());
        Ok(sol.path_costs)
    };
    let mut rows = Vec::new();
    for (x0, x1) in pairs {
        if x0.len() != spec.dims.n || x1.len() != spec.dims.n {
            return Err(argument("probe points must have the state dimension"));
        }
        let c0 = costs(x0)?;
        let c1 = costs(x1)?;
        for &l in lambdas {
            let xl: Vec<f64> = x0.iter().zip(x1).map(|(a, b)| l * b + (1.0 - l) * a).collect();
            let cl = costs(&xl)?;
            let comb: Vec<f64> = (0..c0.len()).map(|p| l * c1[p] + (1.0 - l) * c0[p] - cl[p]).collect();
            let (gap, sd) = mean_std(&comb);
            let stderr = sd / (comb.len() as f64).sqrt();
            rows.push(ConvexityRow {
                x0: x0.clone(),
                x1: x1.clone(),
                lambda: l,
                gap,
                stderr,
                passed: gap >= -stderr_factor * stderr - 1e-12,
            });
        }
    }
    let solves = cache.len();
    let passed = rows.iter().all(|r| r.passed);
    Ok(ConvexityReport { t, rows, solves, passed })
}

/// Fails with a located error when a solve from `(t, x)` does not converge;
/// used by batch commands to keep going over other points.
pub fn located(t: f64, err: LcfError) -> LcfError {
    LcfError::Located { t, path: 0, source: Box::new(err) }
}

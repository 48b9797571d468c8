//! Fixed-point iteration `u ← u − η D[u]` for the Hamiltonian system.
//!
//! Every iterate is simulated forward and solved backward on the same
//! Brownian ensemble, so successive costs and gradients differ only through
//! the control.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adjoint::{backward, 
    frechet_gradient_with, path_costs, solve_adjoint_with, AdjointEnsemble, CostDerivatives, CostEstimate,
    GradientEnsemble,
};
use crate::error::{argument, LcfError, Result};
use crate::linalg::det_sum;
use crate::paths::{l2_norm_array, simulate_forward, BrownianEnsemble, ControlEnsemble, PathArray, StateEnsemble};
use crate::problem::ProblemSpec;
use crate::regression::RegressionBasis;

/// Learning rate: a fixed value or `δ/K̂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSize {
    Fixed(f64),
    Auto(crate::problem::json::AutoKeyword),
}

impl StepSize {
    pub fn auto() -> Self {
        StepSize::Auto(crate::problem::json::AutoKeyword::Auto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescentConfig {
    pub eta: StepSize,
    pub max_iter: usize,
    /// Stop when `‖D[u]‖_{L²}` is at most this.
    pub tol_grad: f64,
    /// A step shorter than this ends the iteration (as a stall unless the
    /// gradient tolerance also holds).
    pub tol_step: f64,
    pub lipschitz_probes: usize,
    pub probe_seed: u64,
    /// Halve η while the cost increases.
    pub backtracking: bool,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            eta: StepSize::auto(),
            max_iter: 200,
            tol_grad: 1e-4,
            tol_step: 1e-9,
            lipschitz_probes: 4,
            probe_seed: 0x1f2e_3d4c,
            backtracking: false,
        }
    }
}

impl DescentConfig {
    pub fn check(&self) -> Result<()> {
        if let StepSize::Fixed(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(argument(format!("eta must be positive, got {eta}")));
            }
        }
        if !(self.tol_grad > 0.0) || !(self.tol_step > 0.0) {
            return Err(argument("descent tolerances must be positive"));
        }
        if self.lipschitz_probes == 0 {
            return Err(argument("need at least one Lipschitz probe"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub grad_norm: f64,
    pub step_norm: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DescentReport {
    pub iterations: Vec<IterationRecord>,
    pub eta: f64,
    pub k_hat: Option<f64>,
    pub converged: bool,
    /// `‖Dᵤl + BᵀY + DᵀZ‖_{L²}` at the returned control.
    pub stationarity_residual: f64,
    /// Kept out of serialized reports so reruns compare byte for byte.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl DescentReport {
    /// Largest ratio of successive gradient norms.
    pub fn max_contraction_ratio(&self) -> f64 {
        self.iterations
            .windows(2)
            .filter(|w| w[0].grad_norm > 0.0)
            .map(|w| w[1].grad_norm / w[0].grad_norm)
            .fold(0.0, f64::max)
    }

    /// `√(1 − 2ηδ + η²K̂)`, the contraction factor of one descent step.
    pub fn contraction_bound(&self, delta: f64) -> Option<f64> {
        let k = self.k_hat?;
        Some((1.0 - 2.0 * self.eta * delta + self.eta * self.eta * k).max(0.0).sqrt())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// The converged quadruple `(X̄, Ȳ, Z̄, ū)` from one initial point.
#[derive(Debug, Clone)]
pub struct HamiltonianSolution {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub x: StateEnsemble,
    pub adjoint: AdjointEnsemble,
    pub u: ControlEnsemble,
    pub gradient: GradientEnsemble,
    /// The noise the solution lives on (restricted to start at `t0`).
    pub noise: BrownianEnsemble,
    pub cost: CostEstimate,
    pub path_costs: Vec<f64>,
    pub report: DescentReport,
}

/// One forward-backward evaluation at a control.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub x: StateEnsemble,
    pub adjoint: AdjointEnsemble,
    pub gradient: GradientEnsemble,
    pub path_costs: Vec<f64>,
    pub cost: f64,
}

/// Everything needed to evaluate cost and gradient at a control.
pub(crate) struct Oracle<'a> {
    pub spec: &'a ProblemSpec,
    pub cost: &'a dyn CostDerivatives,
    pub anchor: Option<&'a PathArray>,
    pub x0: &'a [f64],
    pub noise: &'a BrownianEnsemble,
    pub basis: RegressionBasis,
}

impl Oracle<'_> {
    pub fn evaluate(&self, u: &ControlEnsemble) -> Result<Evaluation> {
        let x = simulate_forward(self.spec, self.x0, u, self.noise)?;
        let want_z = self.spec.coeffs.noise_coupled();
        let adjoint = backward(self.spec, self.cost, &x, u, self.noise, self.basis, self.anchor, want_z)?;
        let gradient = frechet_gradient_with(self.spec, self.cost, &x, u, &adjoint);
        let path_costs = path_costs(self.cost, &x, u);
        let cost = det_sum(path_costs.len(), |p| path_costs[p]) / path_costs.len() as f64;
        Ok(Evaluation { x, adjoint, gradient, path_costs, cost })
    }

    /// Fills in `Z` if [`Self::evaluate`] skipped it.
    pub fn complete(&self, u: &ControlEnsemble, eval: &mut Evaluation) -> Result<()> {
        if !self.spec.coeffs.noise_coupled() {
            eval.adjoint = solve_adjoint_with(self.spec, self.cost, &eval.x, u, self.noise, self.basis, self.anchor)?;
        }
        Ok(())
    }

    pub fn cost_only(&self, u: &ControlEnsemble) -> Result<Vec<f64>> {
        let x = simulate_forward(self.spec, self.x0, u, self.noise)?;
        Ok(path_costs(self.cost, &x, u))
    }
}

/// A seeded random perturbation: a per-path constant plus half-amplitude
/// white noise, independent of the Brownian increments.
pub fn random_perturbation(template: &ControlEnsemble, seed: u64, index: u64, amplitude: f64) -> PathArray {
    let v = &template.values;
    PathArray::from_path_rows(v.paths, v.nodes, v.dim, |p, row| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        rng.set_stream(p as u64);
        let level: Vec<f64> = (0..v.dim).map(|_| rng.sample(StandardNormal)).collect();
        for (i, slot) in row.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *slot = amplitude * (level[i % v.dim] + 0.5 * z);
        }
    })
}

pub(crate) fn lipschitz_at(oracle: &Oracle<'_>, base: &ControlEnsemble, base_eval: &Evaluation, probes: usize, seed: u64) -> Result<f64> {
    if probes == 0 {
        return Err(argument("need at least one Lipschitz probe"));
    }
    let dt = base.grid.dt();
    let mut worst: Option<f64> = None;
    for i in 0..probes {
        let v = random_perturbation(base, seed, i as u64, 1.0);
        let vn = l2_norm_array(&v, dt);
        if !(vn > 0.0) {
            continue;
        }
        let moved = oracle.evaluate(&base.plus_scaled(1.0, &v))?;
        let mut diff = moved.gradient.values.clone();
        diff.axpy(-1.0, &base_eval.gradient.values);
        let ratio = (l2_norm_array(&diff, dt) / vn).powi(2);
        worst = Some(worst.map_or(ratio, |w: f64| w.max(ratio)));
    }
    worst
        .map(|r| 2.0 * r)
        .ok_or_else(|| argument("every Lipschitz probe was degenerate"))
}

/// `K̂ = 2 · max_v ‖D[u₀+v] − D[u₀]‖² / ‖v‖²` at `u₀ ≡ 0`.
pub fn estimate_lipschitz(
    spec: &ProblemSpec,
    x0: &[f64],
    noise: &BrownianEnsemble,
    basis: RegressionBasis,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let oracle = Oracle { spec, cost: &spec.cost, anchor: None, x0, noise, basis };
    let base = ControlEnsemble::zeros(noise.grid, noise.paths(), spec.dims.m);
    let eval = oracle.evaluate(&base)?;
    lipschitz_at(&oracle, &base, &eval, probes, seed)
}

/// `T[u] = u − η D[u]`.
pub fn descent_step(u: &ControlEnsemble, gradient: &GradientEnsemble, eta: f64) -> ControlEnsemble {
    u.plus_scaled(-eta, &gradient.values)
}

/// Step size `η = δ/K` for the contraction `u ↦ u − ηD[u]`.
pub fn auto_eta(delta: f64, k_hat: f64) -> f64 {
    delta / k_hat
}

pub(crate) struct DescentOutcome {
    pub u: ControlEnsemble,
    pub eval: Evaluation,
    pub report: DescentReport,
}

pub(crate) fn run_descent(
    oracle: &Oracle<'_>,
    delta: f64,
    declared_k: Option<f64>,
    cfg: &DescentConfig,
    start: Option<ControlEnsemble>,
) -> Result<DescentOutcome> {
    cfg.check()?;
    let clock = Instant::now();
    let noise = oracle.noise;
    let dt = noise.grid.dt();
    let mut u = start.unwrap_or_else(|| ControlEnsemble::zeros(noise.grid, noise.paths(), oracle.spec.dims.m));
    let mut eval = oracle.evaluate(&u)?;
    let mut grad_norm = l2_norm_array(&eval.gradient.values, dt);

    let (mut eta, k_hat) = match cfg.eta {
        StepSize::Fixed(e) => (e, declared_k),
        StepSize::Auto(_) => {
            let k = match declared_k {
                Some(k) => k,
                // an already-stationary start needs no step size
                None if grad_norm <= cfg.tol_grad => 2.0 * delta,
                None => lipschitz_at(oracle, &u, &eval, cfg.lipschitz_probes, cfg.probe_seed)?,
            };
            (auto_eta(delta, k), Some(k))
        }
    };

    let mut records = vec![IterationRecord { iter: 0, grad_norm, step_norm: 0.0, cost: eval.cost }];
    let mut iter = 0;
    let converged = loop {
        if grad_norm <= cfg.tol_grad {
            break true;
        }
        if iter >= cfg.max_iter {
            break false;
        }
        let mut candidate = descent_step(&u, &eval.gradient, eta);
        let mut next = oracle.evaluate(&candidate)?;
        if cfg.backtracking {
            let mut halvings = 0;
            while next.cost > eval.cost + 1e-12 && halvings < 40 {
                eta *= 0.5;
                halvings += 1;
                candidate = descent_step(&u, &eval.gradient, eta);
                next = oracle.evaluate(&candidate)?;
            }
        }
        let step_norm = eta * grad_norm;
        iter += 1;
        u = candidate;
        eval = next;
        grad_norm = l2_norm_array(&eval.gradient.values, dt);
        records.push(IterationRecord { iter, grad_norm, step_norm, cost: eval.cost });
        if !grad_norm.is_finite() {
            break false;
        }
        if step_norm <= cfg.tol_step {
            break grad_norm <= cfg.tol_grad;
        }
    };
    let report = DescentReport {
        iterations: records,
        eta,
        k_hat,
        converged,
        stationarity_residual: grad_norm,
        wall_time_s: clock.elapsed().as_secs_f64(),
    };
    if !converged {
        return Err(LcfError::Convergence {
            iterations: iter,
            final_residual: grad_norm,
            history: report.iterations.iter().map(|r| r.grad_norm).collect(),
        });
    }
    oracle.complete(&u, &mut eval)?;
    Ok(DescentOutcome { u, eval, report })
}

/// Solves the Hamiltonian system from `(t0, x0)`, where `t0` is a node of
/// the noise grid. Iterates `u ← u − ηD[u]` from `u ≡ 0`.
pub fn solve_hamiltonian(
    spec: &ProblemSpec,
    t0: f64,
    x0: &[f64],
    noise: &BrownianEnsemble,
    basis: RegressionBasis,
    cfg: &DescentConfig,
) -> Result<HamiltonianSolution> {
    solve_hamiltonian_from(spec, t0, x0, noise, basis, cfg, None)
}

/// As [`solve_hamiltonian`], starting the iteration from `start`.
pub fn solve_hamiltonian_from(
    spec: &ProblemSpec,
    t0: f64,
    x0: &[f64],
    noise: &BrownianEnsemble,
    basis: RegressionBasis,
    cfg: &DescentConfig,
    start: Option<ControlEnsemble>,
) -> Result<HamiltonianSolution> {
    if x0.len() != spec.dims.n {
        return Err(argument(format!("initial state has length {}, expected {}", x0.len(), spec.dims.n)));
    }
    let j = noise.grid.index_of(t0)?;
    let local = noise.restrict(j)?;
    let oracle = Oracle { spec, cost: &spec.cost, anchor: None, x0, noise: &local, basis };
    let out = run_descent(&oracle, spec.certificate.delta, spec.certificate.k_lip, cfg, start)?;
    let cost = CostEstimate::from_samples(&out.eval.path_costs);
    Ok(HamiltonianSolution {
        t0: local.grid.t0,
        x0: x0.to_vec(),
        x: out.eval.x,
        adjoint: out.eval.adjoint,
        u: out.u,
        gradient: out.eval.gradient,
        noise: local,
        cost,
        path_costs: out.eval.path_costs,
        report: out.report,
    })
}

/// `min_v [J(ū+v) − J(ū)] / (½‖v‖²)` over `trials` random perturbations on
/// the solution's own noise.
pub fn uniform_convexity_gap(
    spec: &ProblemSpec,
    sol: &HamiltonianSolution,
    basis: RegressionBasis,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(argument("need at least one trial"));
    }
    let oracle = Oracle { spec, cost: &spec.cost, anchor: None, x0: &sol.x0, noise: &sol.noise, basis };
    let dt = sol.noise.grid.dt();
    let base = &sol.path_costs;
    let mut worst = f64::INFINITY;
    for i in 0..trials {
        let v = random_perturbation(&sol.u, seed, i as u64, 0.5);
        let vn2 = l2_norm_array(&v, dt).powi(2);
        if vn2 == 0.0 {
            continue;
        }
        let moved = oracle.cost_only(&sol.u.plus_scaled(1.0, &v))?;
        let diff = det_sum(moved.len(), |p| moved[p] - base[p]) / moved.len() as f64;
        worst = worst.min(diff / (0.5 * vn2));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{generate_brownian, TimeGrid};
    use crate::problem::presets;

    fn noise(paths: usize, steps: usize, seed: u64) -> BrownianEnsemble {
        generate_brownian(TimeGrid::new(0.0, 1.0, steps).unwrap(), paths, 1, seed, true).unwrap()
    }

    #[test]
    fn zero_problem_is_stationary_at_the_start() {
        let spec = presets::zero_problem();
        let w = noise(50, 10, 1);
        let sol = solve_hamiltonian(&spec, 0.0, &[0.0], &w, RegressionBasis::default(), &DescentConfig::default()).unwrap();
        assert_eq!(sol.report.iterations.len(), 1);
        assert_eq!(sol.cost.mean, 0.0);
        assert!(sol.u.values.data.iter().all(|v| *v == 0.0));
        assert!(sol.adjoint.y.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn auto_eta_is_delta_over_k() {
        assert_eq!(auto_eta(1.0, 4.0), 0.25);
    }

    #[test]
    fn identity_gradient_has_lipschitz_two() {
        // B = D = 0 and l = ½u²: D[u] = u
        let mut spec = presets::zero_problem();
        spec.coeffs = presets::scalar_coeffs(0.0, 0.0, 0.0, 0.0, 0.0, 0.3);
        let w = noise(64, 10, 2);
        let k = estimate_lipschitz(&spec, &[0.0], &w, RegressionBasis::default(), 3, 5).unwrap();
        assert!((k - 2.0).abs() < 1e-12, "{k}");
    }

    #[test]
    fn one_step_from_zero_on_deterministic_p1() {
        let spec = presets::p1(0.0);
        let w = noise(20, 50, 3);
        let oracle = Oracle { spec: &spec, cost: &spec.cost, anchor: None, x0: &[1.0], noise: &w, basis: RegressionBasis::default() };
        let u0 = ControlEnsemble::zeros(w.grid, 20, 1);
        let e = oracle.evaluate(&u0).unwrap();
        let u1 = descent_step(&u0, &e.gradient, 0.25);
        for k in 0..50 {
            let t = w.grid.node(k);
            assert!((u1.u(4, k)[0] + 0.25 * (2.0 - t)).abs() <= 2.0 * w.grid.dt());
        }
        // a stationary control is a fixed point
        let same = descent_step(&u0, &GradientEnsemble { grid: w.grid, values: PathArray::zeros(20, 50, 1) }, 0.25);
        assert_eq!(same, u0);
    }

    #[test]
    fn max_iter_exhaustion_reports_history() {
        let spec = presets::p1(0.3);
        let w = noise(400, 10, 4);
        let cfg = DescentConfig { max_iter: 1, ..Default::default() };
        match solve_hamiltonian(&spec, 0.0, &[1.0], &w, RegressionBasis::default(), &cfg) {
            Err(LcfError::Convergence { iterations, history, .. }) => {
                assert_eq!(iterations, 1);
                assert_eq!(history.len(), 2);
            }
            other => panic!("expected a convergence error, got {other:?}"),
        }
    }

    #[test]
    fn decoupled_quadratic_has_unit_gap() {
        let mut spec = presets::zero_problem();
        spec.coeffs = presets::scalar_coeffs(0.0, 0.0, 0.0, 0.0, 0.0, 0.3);
        let w = noise(64, 10, 6);
        let sol = solve_hamiltonian(&spec, 0.0, &[0.0], &w, RegressionBasis::default(), &DescentConfig::default()).unwrap();
        let gap = uniform_convexity_gap(&spec, &sol, RegressionBasis::default(), 5, 9).unwrap();
        assert!((gap - 1.0).abs() < 1e-12, "{gap}");
    }
}

//! The reduced Hamiltonian `L(t,x,u,p,Q) = ⟨u,p⟩ + ½⟨Qu,u⟩ + l(t,x,u)`,
//! its minimizer in `u`, the induced feedback map and closed-loop checks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::{path_costs, CostEstimate};
use crate::descent::HamiltonianSolution;
use crate::error::{argument, LcfError, Result};
use crate::linalg::{det_sum, mean_std, min_eigenvalue, symmetrize};
use crate::paths::{simulate_feedback, BrownianEnsemble, ControlEnsemble, StateEnsemble};
use crate::problem::ProblemSpec;
use crate::riccati::linear_feedback_cost;
use crate::value::{ValueSample, ValueSource};

/// Linear coefficient and curvature of the reduced Hamiltonian at `(t, x)`.
#[derive(Debug, Clone)]
pub struct FeedbackQuery {
    pub t: f64,
    pub x: Vec<f64>,
    /// `Bᵀp_x + Σ DᵢᵀQ_x(Cᵢx + σᵢ)`.
    pub p: DVector<f64>,
    /// `Σ DᵢᵀQ_x Dᵢ`, symmetric.
    pub q: DMatrix<f64>,
}

impl FeedbackQuery {
    /// Assembles `(p, Q)` from `DₓV` and `D²ₓₓV` at `(t, x)`.
    pub fn assemble(spec: &ProblemSpec, t: f64, x: &[f64], dv: &[f64], dvv: &DMatrix<f64>) -> Self {
        let c = spec.coeffs.at(t);
        let xv = DVector::from_column_slice(x);
        let mut p = c.b.transpose() * DVector::from_column_slice(dv);
        let mut q = DMatrix::zeros(spec.dims.m, spec.dims.m);
        for i in 0..c.noise_dim {
            let dt_h = c.d[i].transpose() * dvv;
            p += &dt_h * (c.c[i] * &xv + c.sigma[i].column(0));
            q += &dt_h * c.d[i];
        }
        Self { t, x: x.to_vec(), p, q: symmetrize(&q).0 }
    }

    pub fn from_sample(spec: &ProblemSpec, s: &ValueSample) -> Result<Self> {
        Ok(Self::assemble(spec, s.t, &s.x, &s.dv, &s.hessian()?))
    }

    /// `L(t, x, u, p, Q)`.
    pub fn reduced_hamiltonian(&self, spec: &ProblemSpec, u: &[f64]) -> f64 {
        let uv = DVector::from_column_slice(u);
        uv.dot(&self.p) + 0.5 * (&self.q * &uv).dot(&uv) + spec.cost.running_value(self.t, &self.x, u)
    }

    /// `D_u L = p + Qu + D_u l`.
    pub fn gradient(&self, spec: &ProblemSpec, u: &[f64]) -> DVector<f64> {
        let mut g = vec![0.0; u.len()];
        spec.cost.running_grad_u(self.t, &self.x, u, &mut g);
        DVector::from_vec(g) + &self.p + &self.q * DVector::from_column_slice(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonConfig {
    pub max_iter: usize,
    /// Stop when `‖D_u L‖ ≤ tol · (1 + ‖p‖)`.
    pub tol: f64,
    /// Lower bound on the Hessian's smallest eigenvalue; defaults to the
    /// problem's δ. Newton fails below half of it.
    pub delta: Option<f64>,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-10, delta: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NewtonOutcome {
    pub u: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Damped Newton from `u = 0`: `u ← u − α[Q + D_uu l]⁻¹ D_u L`, halving `α`
/// until the residual decreases.
pub fn minimize_hamiltonian_in_u(spec: &ProblemSpec, query: &FeedbackQuery, cfg: &NewtonConfig) -> Result<NewtonOutcome> {
    let m = spec.dims.m;
    let delta = cfg.delta.unwrap_or(spec.certificate.delta);
    let target = cfg.tol * (1.0 + query.p.norm());
    let mut u = vec![0.0; m];
    let mut g = query.gradient(spec, &u);
    let mut r = g.norm();
    let mut history = vec![r];
    for it in 0..cfg.max_iter {
        if r <= target {
            return Ok(NewtonOutcome { u, iterations: it, residual: r });
        }
        let hess = symmetrize(&(&query.q + spec.cost.running_hessian_uu(query.t, &u))).0;
        let lo = min_eigenvalue(&hess);
        if lo < 0.5 * delta {
            return Err(LcfError::Regularity(format!(
                "Hessian of the reduced Hamiltonian has smallest eigenvalue {lo:.3e} < δ/2 at t = {}",
                query.t
            )));
        }
        let step = hess
            .cholesky()
            .ok_or_else(|| LcfError::Regularity("Hessian of the reduced Hamiltonian is not positive definite".into()))?
            .solve(&g);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, s)| a - alpha * s).collect();
            let gt = query.gradient(spec, &trial);
            if gt.norm() < r {
                u = trial;
                g = gt;
                r = g.norm();
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        history.push(r);
        if !accepted {
            // no decrease possible: the residual sits at rounding level
            if r <= 1e3 * target {
                return Ok(NewtonOutcome { u, iterations: it + 1, residual: r });
            }
            return Err(LcfError::Newton(format!("damping could not reduce the residual {r:.3e}")));
        }
    }
    if r <= target {
        return Ok(NewtonOutcome { u, iterations: cfg.max_iter, residual: r });
    }
    Err(LcfError::Convergence { iterations: cfg.max_iter, final_residual: r, history })
}

/// `ū(t, x)`: minimizer of the reduced Hamiltonian with `(p, Q)` assembled
/// from the value source's derivatives.
pub fn feedback_map(spec: &ProblemSpec, source: &dyn ValueSource, t: f64, x: &[f64], cfg: &NewtonConfig) -> Result<Vec<f64>> {
    let (dv, dvv) = source.derivatives(t, x)?;
    let q = FeedbackQuery::assemble(spec, t, x, &dv, &dvv);
    Ok(minimize_hamiltonian_in_u(spec, &q, cfg)?.u)
}

/// Closed loop `u_k = ū(t_k, X_k)` from `x0` at the noise grid's first node.
pub fn simulate_closed_loop(
    spec: &ProblemSpec,
    x0: &[f64],
    noise: &BrownianEnsemble,
    source: &dyn ValueSource,
    cfg: &NewtonConfig,
) -> Result<(StateEnsemble, ControlEnsemble, CostEstimate)> {
    simulate_policy(spec, x0, noise, |_, t, x, out| {
        out.copy_from_slice(&feedback_map(spec, source, t, x, cfg)?);
        Ok(())
    })
}

/// Closed loop under an arbitrary feedback `f(k, t, x, out)`; failures are
/// reported with their time and path.
pub fn simulate_policy<F>(
    spec: &ProblemSpec,
    x0: &[f64],
    noise: &BrownianEnsemble,
    f: F,
) -> Result<(StateEnsemble, ControlEnsemble, CostEstimate)>
where
    F: Fn(usize, f64, &[f64], &mut [f64]) -> Result<()> + Sync,
{
    let (x, u) = simulate_feedback(spec, x0, noise, |p, k, t, x, out| {
        f(k, t, x, out).map_err(|e| LcfError::Located { t, path: p, source: Box::new(e) })
    })?;
    let cost = CostEstimate::from_samples(&path_costs(&spec.cost, &x, &u));
    Ok((x, u, cost))
}

/// Relative `L²` distance between the open-loop optimum and the feedback
/// evaluated along its own paths.
pub fn open_loop_agreement(spec: &ProblemSpec, sol: &HamiltonianSolution, source: &dyn ValueSource, cfg: &NewtonConfig) -> Result<f64> {
    let grid = sol.u.grid;
    let m = spec.dims.m;
    let paths = sol.u.paths();
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..grid.steps {
        let t = grid.node(k);
        let errs: Vec<(f64, f64)> = {
            use rayon::prelude::*;
            (0..paths)
                .into_par_iter()
                .map(|p| {
                    let fb = feedback_map(spec, source, t, sol.x.x(p, k), cfg)?;
                    let u = sol.u.u(p, k);
                    Ok((
                        (0..m).map(|j| (fb[j] - u[j]).powi(2)).sum::<f64>(),
                        u.iter().map(|v| v * v).sum::<f64>(),
                    ))
                })
                .collect::<Result<Vec<_>>>()?
        };
        num += det_sum(paths, |p| errs[p].0);
        den += det_sum(paths, |p| errs[p].1);
    }
    Ok(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() })
}

/// `|ū| ≤ K(1 + |x| + |p|)` audited on random queries.
#[derive(Debug, Clone, Serialize)]
pub struct GrowthAudit {
    pub queries: usize,
    /// `max |ū| / (1 + |x| + |p|)`.
    pub fitted_constant: f64,
    pub max_residual: f64,
}

/// Draws `queries` random `(x, p)` with `Q = 0` at time `t` and records the
/// growth ratio of the minimizer.
pub fn growth_audit(spec: &ProblemSpec, t: f64, queries: usize, scale: f64, seed: u64, cfg: &NewtonConfig) -> Result<GrowthAudit> {
    if queries == 0 {
        return Err(argument("growth audit needs at least one query"));
    }
    let (n, m) = (spec.dims.n, spec.dims.m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut max_residual = 0.0f64;
    for _ in 0..queries {
        let x: Vec<f64> = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let p = DVector::from_fn(m, |_, _| scale * rng.random_range(-1.0..1.0));
        let q = FeedbackQuery { t, x: x.clone(), p: p.clone(), q: DMatrix::zeros(m, m) };
        let out = minimize_hamiltonian_in_u(spec, &q, cfg)?;
        let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let un = out.u.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(un / (1.0 + xn + p.norm()));
        max_residual = max_residual.max(out.residual);
    }
    Ok(GrowthAudit { queries, fitted_constant: worst, max_residual })
}

/// Largest `|ū(q) − ū(q′)| / |q − q′|` over random nearby query pairs.
pub fn continuity_probe(spec: &ProblemSpec, t: f64, pairs: usize, distance: f64, seed: u64, cfg: &NewtonConfig) -> Result<f64> {
    let (n, m) = (spec.dims.n, spec.dims.m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
        let dx: Vec<f64> = (0..n).map(|_| distance * rng.random_range(-1.0..1.0)).collect();
        let dp = DVector::from_fn(m, |_, _| distance * rng.random_range(-1.0..1.0));
        let a = FeedbackQuery { t, x: x.clone(), p: p.clone(), q: DMatrix::zeros(m, m) };
        let b = FeedbackQuery {
            t,
            x: x.iter().zip(&dx).map(|(a, b)| a + b).collect(),
            p: &p + &dp,
            q: DMatrix::zeros(m, m),
        };
        let ua = minimize_hamiltonian_in_u(spec, &a, cfg)?.u;
        let ub = minimize_hamiltonian_in_u(spec, &b, cfg)?.u;
        let du = ua.iter().zip(&ub).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let dq = (dx.iter().map(|v| v * v).sum::<f64>() + dp.norm_squared()).sqrt();
        if dq > 0.0 {
            worst = worst.max(du / dq);
        }
    }
    Ok(worst)
}

/// `𝓗(ū) ≤ 𝓗(u)` for `samples` random `u` around the minimizer.
pub fn infimum_check(spec: &ProblemSpec, query: &FeedbackQuery, ubar: &[f64], samples: usize, radius: f64, seed: u64) -> bool {
    let h0 = query.reduced_hamiltonian(spec, ubar);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples).all(|_| {
        let u: Vec<f64> = ubar.iter().map(|v| v + radius * rng.random_range(-1.0..1.0)).collect();
        query.reduced_hamiltonian(spec, &u) >= h0 - 1e-12 * (1.0 + h0.abs())
    })
}

/// One non-optimal loop `u = ū(t,x) + ΔK x + Δk`.
#[derive(Debug, Clone, Serialize)]
pub struct PerturbedLoop {
    pub gain_shift: Vec<f64>,
    pub offset_shift: Vec<f64>,
    pub cost: CostEstimate,
    /// `J_perturbed − J_closed` on common noise.
    pub excess: f64,
    /// Standard error of the paired per-path differences.
    pub excess_stderr: f64,
    /// Exact expected cost of the discretized loop, when the problem is LQ
    /// and the source is affine.
    pub exact_cost: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub value: f64,
    pub j_closed: CostEstimate,
    pub j_open: CostEstimate,
    pub gap_closed_open: f64,
    pub gap_closed_value: f64,
    pub tolerance: f64,
    pub perturbed: Vec<PerturbedLoop>,
    /// The loop with gain `wrong_gain` in place of the optimal one (scalar
    /// problems only).
    pub wrong_gain: Option<PerturbedLoop>,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationConfig {
    pub perturbations: usize,
    pub gain_amplitude: f64,
    pub offset_amplitude: f64,
    pub seed: u64,
    /// Replace the optimal gain by this one in an extra loop (n = m = 1).
    pub wrong_gain: Option<f64>,
    /// Multiplies `Δt · max(1, |V|)` in the budget.
    pub discretization_factor: f64,
    /// Multiplies `s / √M` in the budget.
    pub mc_factor: f64,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self {
            perturbations: 10,
            gain_amplitude: 0.5,
            offset_amplitude: 0.3,
            seed: 11,
            wrong_gain: Some(-1.3),
            discretization_factor: 3.0,
            mc_factor: 4.0,
        }
    }
}

/// Compares the closed loop driven by `source` with the open-loop optimum
/// `open` and the value `V(t0, x0)`, then checks that perturbed feedbacks
/// cost at least `V` up to tolerance.
pub fn verify_optimality(
    spec: &ProblemSpec,
    open: &HamiltonianSolution,
    source: &dyn ValueSource,
    newton: &NewtonConfig,
    cfg: &VerificationConfig,
) -> Result<VerificationReport> {
    let noise = &open.noise;
    let (t0, x0) = (open.t0, open.x0.clone());
    let value = source.sample(t0, &x0)?.v;
    let (cx, cu, j_closed) = simulate_closed_loop(spec, &x0, noise, source, newton)?;
    let closed_costs = path_costs(&spec.cost, &cx, &cu);
    let paths = noise.paths() as f64;
    let dt = noise.grid.dt();
    let scale = value.abs().max(1.0);
    let tolerance = (cfg.discretization_factor * dt * scale)
        .max(cfg.mc_factor * j_closed.std.max(open.cost.std) / paths.sqrt());
    let gap_closed_open = j_closed.mean - open.cost.mean;
    let gap_closed_value = j_closed.mean - value;

    let (n, m) = (spec.dims.n, spec.dims.m);
    let affine = source.affine_feedback(spec);
    let exact = |shift: &DMatrix<f64>, off: &DVector<f64>| -> Option<f64> {
        let aff = affine.as_ref()?;
        linear_feedback_cost(spec, noise.grid, &x0, |t| {
            let (k, k0) = aff(t);
            (k + shift, k0 + off)
        })
        .ok()
    };
    let run = |shift: DMatrix<f64>, off: DVector<f64>, replace: bool| -> Result<PerturbedLoop> {
        let (px, pu, cost) = simulate_policy(spec, &x0, noise, |_, t, x, out| {
            let base = if replace { vec![0.0; m] } else { feedback_map(spec, source, t, x, newton)? };
            let xv = DVector::from_column_slice(x);
            let du = &shift * &xv + &off;
            for j in 0..m {
                out[j] = base[j] + du[j];
            }
            Ok(())
        })?;
        let costs = path_costs(&spec.cost, &px, &pu);
        let diffs: Vec<f64> = costs.iter().zip(&closed_costs).map(|(a, b)| a - b).collect();
        let (excess, sd) = mean_std(&diffs);
        let exact_cost = if replace {
            affine.as_ref().and_then(|_| {
                linear_feedback_cost(spec, noise.grid, &x0, |_| (shift.clone(), off.clone())).ok()
            })
        } else {
            exact(&shift, &off)
        };
        Ok(PerturbedLoop {
            gain_shift: shift.as_slice().to_vec(),
            offset_shift: off.as_slice().to_vec(),
            passed: cost.mean >= value - tolerance,
            cost,
            excess,
            excess_stderr: sd / paths.sqrt(),
            exact_cost,
        })
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut perturbed = Vec::with_capacity(cfg.perturbations);
    for _ in 0..cfg.perturbations {
        let shift = DMatrix::from_fn(m, n, |_, _| cfg.gain_amplitude * rng.random_range(-1.0..1.0));
        let off = DVector::from_fn(m, |_, _| cfg.offset_amplitude * rng.random_range(-1.0..1.0));
        perturbed.push(run(shift, off, false)?);
    }

    let wrong_gain = match cfg.wrong_gain {
        Some(g) if n == 1 && m == 1 => {
            let mut l = run(DMatrix::from_element(1, 1, g), DVector::zeros(1), true)?;
            // strictly worse than the optimal loop, beyond the paired tolerance
            l.passed = l.excess > cfg.mc_factor * l.excess_stderr;
            Some(l)
        }
        _ => None,
    };

    let passed = gap_closed_open.abs() <= tolerance
        && gap_closed_value.abs() <= tolerance
        && perturbed.iter().all(|p| p.passed)
        && wrong_gain.as_ref().is_none_or(|l| l.passed);
    Ok(VerificationReport {
        t0,
        x0,
        value,
        j_closed,
        j_open: open.cost,
        gap_closed_open,
        gap_closed_value,
        tolerance,
        perturbed,
        wrong_gain,
        passed,
    })
}

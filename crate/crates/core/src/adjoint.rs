//! Backward least-squares Monte Carlo solve of the adjoint BSDE
//!
//! ```text
//! dY = −(AᵀY + Σ CᵢᵀZᵢ + Dₓl) dt + Σ Zᵢ dWⁱ,   Y_T = Dₓg(X_T)
//! ```
//!
//! together with the gradient `D[u] = BᵀY + Σ DᵢᵀZᵢ + Dᵤl` of the cost and
//! the Monte Carlo cost itself.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{argument, Result};
use crate::linalg::{det_sum, mat_t_vec_acc, mean_std};
use crate::paths::{check_ensembles, BrownianEnsemble, ControlEnsemble, PathArray, StateEnsemble, TimeGrid};
use crate::problem::{CostModel, ProblemSpec};
use crate::regression::{Design, RegressionBasis};
use crate::variational::FrozenQuadratic;

/// Cost derivatives that may depend on the path and step, so the same
/// backward solver serves the original cost and frozen quadratic models.
pub trait CostDerivatives: Sync {
    fn terminal_value(&self, p: usize, x: &[f64]) -> f64;
    fn terminal_grad(&self, p: usize, x: &[f64], out: &mut [f64]);
    fn running_value(&self, p: usize, k: usize, t: f64, x: &[f64], u: &[f64]) -> f64;
    fn running_grad_x(&self, p: usize, k: usize, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);
    fn running_grad_u(&self, p: usize, k: usize, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);
}

impl CostDerivatives for CostModel {
    fn terminal_value(&self, _: usize, x: &[f64]) -> f64 {
        CostModel::terminal_value(self, x)
    }
    fn terminal_grad(&self, _: usize, x: &[f64], out: &mut [f64]) {
        CostModel::terminal_grad(self, x, out)
    }
    fn running_value(&self, _: usize, _: usize, t: f64, x: &[f64], u: &[f64]) -> f64 {
        CostModel::running_value(self, t, x, u)
    }
    fn running_grad_x(&self, _: usize, _: usize, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        CostModel::running_grad_x(self, t, x, u, out)
    }
    fn running_grad_u(&self, _: usize, _: usize, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        CostModel::running_grad_u(self, t, x, u, out)
    }
}

/// Regression diagnostics for one backward step.
#[derive(Debug, Clone, Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub basis_size: usize,
    pub condition: f64,
    pub residual_rms_y: f64,
    pub residual_rms_z: f64,
    /// Largest standardized mean of the `Y_{k+1}` residual.
    pub residual_mean_z: f64,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct AdjointDiagnostics {
    pub steps: Vec<StepDiagnostics>,
}

impl AdjointDiagnostics {
    pub fn max_condition(&self) -> f64 {
        self.steps.iter().map(|s| s.condition).fold(0.0, f64::max)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// `(Y, Z)` on the grid. `y` has `N+1` nodes; `z` stores the blocks `Zᵢ`
/// one after another (`n·d` entries per step). `y_cont` holds the fitted
/// continuation values `E[Y_{k+1} | X_k]`.
#[derive(Debug, Clone)]
pub struct AdjointEnsemble {
    pub grid: TimeGrid,
    pub y: PathArray,
    pub y_cont: PathArray,
    pub z: PathArray,
    pub diagnostics: AdjointDiagnostics,
}

impl AdjointEnsemble {
    /// `Zᵢ` on path `p`, step `k`.
    pub fn z_block(&self, p: usize, k: usize, i: usize) -> &[f64] {
        let n = self.y.dim;
        &self.z.at(p, k)[i * n..(i + 1) * n]
    }
}

/// `D[u]` on `[path][step][control coordinate]`.
#[derive(Debug, Clone)]
pub struct GradientEnsemble {
    pub grid: TimeGrid,
    pub values: PathArray,
}

/// Solves the adjoint equation for the problem's own cost, or for a frozen
/// quadratic model when `frozen` is supplied.
pub fn solve_adjoint(
    spec: &ProblemSpec,
    x: &StateEnsemble,
    u: &ControlEnsemble,
    w: &BrownianEnsemble,
    basis: RegressionBasis,
    frozen: Option<&FrozenQuadratic>,
) -> Result<AdjointEnsemble> {
    match frozen {
        None => solve_adjoint_with(spec, &spec.cost, x, u, w, basis, None),
        Some(f) => solve_adjoint_with(spec, f, x, u, w, basis, Some(&f.anchor)),
    }
}

/// The backward solve with an arbitrary cost model. Regression features at
/// step `k` are `X_k`, followed by `anchor_k` when an anchor ensemble is
/// given.
pub fn solve_adjoint_with(
    spec: &ProblemSpec,
    cost: &dyn CostDerivatives,
    x: &StateEnsemble,
    u: &ControlEnsemble,
    w: &BrownianEnsemble,
    basis: RegressionBasis,
    anchor: Option<&PathArray>,
) -> Result<AdjointEnsemble> {
    backward(spec, cost, x, u, w, basis, anchor, true)
}

/// With `want_z = false` the `Z` regression is skipped and `Z` is left at
/// zero; only valid when no `Cᵢ`, `Dᵢ` is nonzero.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    spec: &ProblemSpec,
    cost: &dyn CostDerivatives,
    x: &StateEnsemble,
    u: &ControlEnsemble,
    w: &BrownianEnsemble,
    basis: RegressionBasis,
    anchor: Option<&PathArray>,
    want_z: bool,
) -> Result<AdjointEnsemble> {
    check_ensembles(spec, u, w)?;
    let grid = w.grid;
    let (m_paths, steps) = (w.paths(), grid.steps);
    let n = spec.dims.n;
    let d = spec.dims.d;
    let dt = grid.dt();
    if x.values.paths != m_paths || x.values.nodes != steps + 1 || x.values.dim != n {
        return Err(argument("state ensemble does not match the noise"));
    }
    let fdim = n + anchor.map_or(0, |a| a.dim);
    if let Some(a) = anchor {
        if a.paths != m_paths || a.nodes < steps {
            return Err(argument("anchor ensemble does not match the noise"));
        }
    }
    let basis_size = basis.size(fdim);
    if m_paths < basis_size {
        return Err(argument(format!("{m_paths} paths are fewer than the basis size {basis_size}")));
    }

    let mut y = PathArray::zeros(m_paths, steps + 1, n);
    let mut y_cont = PathArray::zeros(m_paths, steps, n);
    let mut z = PathArray::zeros(m_paths, steps, n * d);
    let mut diagnostics = Vec::with_capacity(steps);

    // terminal condition
    let mut next: Vec<f64> = vec![0.0; m_paths * n];
    next.par_chunks_mut(n).enumerate().for_each(|(p, o)| cost.terminal_grad(p, x.x(p, steps), o));
    y.node_mut(steps).copy_from_slice(&next);

    let mut features = vec![0.0; m_paths * fdim];
    let mut ztargets = vec![0.0; m_paths * n * d];
    for k in (0..steps).rev() {
        let t = grid.node(k);
        match anchor {
            None => features.copy_from_slice(x.values.node(k)),
            Some(a) => features.par_chunks_mut(fdim).enumerate().for_each(|(p, f)| {
                f[..n].copy_from_slice(x.x(p, k));
                f[n..].copy_from_slice(a.at(p, k));
            }),
        }
        let design = Design::new(basis, &features, m_paths, fdim, k)?;
        let yfit = design.fit(&next, n);
        let cont = &yfit.fitted;

        let (zvals, rms_z) = if want_z {
            ztargets.par_chunks_mut(n * d).enumerate().for_each(|(p, zt)| {
                let dw = w.dw(p, k);
                for i in 0..d {
                    for j in 0..n {
                        zt[i * n + j] = (next[p * n + j] - cont[p * n + j]) * dw[i] / dt;
                    }
                }
            });
            let zfit = design.fit(&ztargets, n * d);
            (zfit.fitted, zfit.diagnostics.residual_rms)
        } else {
            (vec![0.0; m_paths * n * d], 0.0)
        };
        let zvals = &zvals;

        let c = spec.coeffs.at(t);
        let mut cur = vec![0.0; m_paths * n];
        cur.par_chunks_mut(n).enumerate().for_each_init(|| vec![0.0; n], |drv, (p, yk)| {
            let ct = &cont[p * n..(p + 1) * n];
            let zp = &zvals[p * n * d..(p + 1) * n * d];
            cost.running_grad_x(p, k, t, x.x(p, k), u.u(p, k), drv);
            mat_t_vec_acc(c.a, ct, 1.0, drv);
            for i in 0..d {
                mat_t_vec_acc(c.c[i], &zp[i * n..(i + 1) * n], 1.0, drv);
            }
            for j in 0..n {
                yk[j] = ct[j] + drv[j] * dt;
            }
        });
        y.node_mut(k).copy_from_slice(&cur);
        y_cont.node_mut(k).copy_from_slice(cont);
        z.node_mut(k).copy_from_slice(zvals);
        diagnostics.push(StepDiagnostics {
            step: k,
            basis_size: design.basis_size(),
            condition: design.condition(),
            residual_rms_y: yfit.diagnostics.residual_rms,
            residual_rms_z: rms_z,
            residual_mean_z: yfit.diagnostics.residual_mean_z,
        });
        next = cur;
    }
    diagnostics.reverse();
    Ok(AdjointEnsemble { grid, y, y_cont, z, diagnostics: AdjointDiagnostics { steps: diagnostics } })
}

/// `D[u]_k = Bᵀ E_k[Y_{k+1}] + Σ DᵢᵀZᵢ + Dᵤl(t_k, X_k, u_k)` on every path.
///
/// Using the fitted continuation value in place of `Y_k` makes this the
/// exact gradient of the discretized cost; the two differ by `O(Δt)`.
pub fn frechet_gradient(spec: &ProblemSpec, x: &StateEnsemble, u: &ControlEnsemble, adj: &AdjointEnsemble) -> GradientEnsemble {
    frechet_gradient_with(spec, &spec.cost, x, u, adj)
}

pub fn frechet_gradient_with(
    spec: &ProblemSpec,
    cost: &dyn CostDerivatives,
    x: &StateEnsemble,
    u: &ControlEnsemble,
    adj: &AdjointEnsemble,
) -> GradientEnsemble {
    let grid = adj.grid;
    let m = spec.dims.m;
    let d = spec.dims.d;
    let steps = grid.steps;
    let mut values = PathArray::zeros(u.paths(), steps, m);
    let snaps = crate::paths::snapshots(spec, &grid);
    for k in 0..steps {
        let t = grid.node(k);
        let c = &snaps[k];
        values.node_mut(k).par_chunks_mut(m).enumerate().for_each(|(p, out)| {
            cost.running_grad_u(p, k, t, x.x(p, k), u.u(p, k), out);
            mat_t_vec_acc(c.b, adj.y_cont.at(p, k), 1.0, out);
            for i in 0..d {
                mat_t_vec_acc(c.d[i], adj.z_block(p, k, i), 1.0, out);
            }
        });
    }
    GradientEnsemble { grid, values }
}

/// Realized cost `g(X_N) + Σ_k l(t_k, X_k, u_k)Δt` of each path.
pub fn path_costs(cost: &dyn CostDerivatives, x: &StateEnsemble, u: &ControlEnsemble) -> Vec<f64> {
    let grid = x.grid;
    let steps = grid.steps;
    let dt = grid.dt();
    let mut run = vec![0.0; x.paths()];
    for k in 0..steps {
        let t = grid.node(k);
        run.par_iter_mut().enumerate().for_each(|(p, r)| *r += cost.running_value(p, k, t, x.x(p, k), u.u(p, k)));
    }
    run.par_iter_mut().enumerate().for_each(|(p, r)| *r = cost.terminal_value(p, x.x(p, steps)) + *r * dt);
    run
}

/// Monte Carlo estimate of `J` with its sample spread.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
}

impl CostEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let (mean, std) = mean_std(samples);
        Self { mean, std, stderr: std / (samples.len() as f64).sqrt() }
    }
}

/// `J = (1/M) Σ_p [g(X_N) + Σ_k l Δt]`.
pub fn evaluate_cost(spec: &ProblemSpec, x: &StateEnsemble, u: &ControlEnsemble) -> f64 {
    let c = path_costs(&spec.cost, x, u);
    det_sum(c.len(), |p| c[p]) / c.len() as f64
}

pub fn cost_estimate(spec: &ProblemSpec, x: &StateEnsemble, u: &ControlEnsemble) -> CostEstimate {
    CostEstimate::from_samples(&path_costs(&spec.cost, x, u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{generate_brownian, simulate_forward};
    use crate::problem::presets;

    fn setup(spec: &ProblemSpec, x0: f64, paths: usize, steps: usize) -> (BrownianEnsemble, ControlEnsemble, StateEnsemble) {
        let g = TimeGrid::new(0.0, spec.horizon, steps).unwrap();
        let w = generate_brownian(g, paths, spec.dims.d, 11, true).unwrap();
        let u = ControlEnsemble::zeros(g, paths, spec.dims.m);
        let x = simulate_forward(spec, &[x0], &u, &w).unwrap();
        (w, u, x)
    }

    #[test]
    fn linear_terminal_gives_constant_adjoint() {
        let spec = presets::linear_terminal(0.7);
        let (w, u, x) = setup(&spec, 0.0, 100, 20);
        let adj = solve_adjoint(&spec, &x, &u, &w, RegressionBasis::default(), None).unwrap();
        for p in 0..100 {
            for k in 0..=20 {
                assert!((adj.y.at(p, k)[0] - 0.7).abs() < 1e-12);
            }
            for k in 0..20 {
                assert!(adj.z.at(p, k)[0].abs() < 1e-10);
            }
        }
    }

    #[test]
    fn deterministic_p1_adjoint_and_gradient() {
        let spec = presets::p1(0.0);
        let (w, u, x) = setup(&spec, 1.0, 50, 50);
        let adj = solve_adjoint(&spec, &x, &u, &w, RegressionBasis::default(), None).unwrap();
        let dt = 0.02;
        assert!((adj.y.at(3, 0)[0] - 2.0).abs() <= 2.0 * dt);
        let grad = frechet_gradient(&spec, &x, &u, &adj);
        for k in 0..50 {
            let t = k as f64 * dt;
            assert!((grad.values.at(5, k)[0] - (2.0 - t)).abs() <= 2.0 * dt);
        }
        assert!((evaluate_cost(&spec, &x, &u) - 1.0).abs() <= 2.0 * dt);
    }

    #[test]
    fn zero_problem_has_zero_gradient_and_cost() {
        let spec = presets::zero_problem();
        let (w, u, x) = setup(&spec, 0.3, 20, 10);
        let adj = solve_adjoint(&spec, &x, &u, &w, RegressionBasis::default(), None).unwrap();
        let grad = frechet_gradient(&spec, &x, &u, &adj);
        assert!(grad.values.data.iter().all(|v| *v == 0.0));
        assert_eq!(evaluate_cost(&spec, &x, &u), 0.0);
    }

    #[test]
    fn too_few_paths_for_the_basis() {
        let spec = presets::p1(0.3);
        let (w, u, x) = setup(&spec, 0.0, 2, 5);
        let err = solve_adjoint(&spec, &x, &u, &w, RegressionBasis::default(), None).unwrap_err();
        assert!(matches!(err, crate::error::LcfError::Argument(_)));
    }

    #[test]
    fn residual_means_vanish() {
        let spec = presets::p1(0.3);
        let (w, u, x) = setup(&spec, 0.0, 4000, 20);
        let adj = solve_adjoint(&spec, &x, &u, &w, RegressionBasis::default(), None).unwrap();
        for s in &adj.diagnostics.steps {
            assert!(s.residual_mean_z <= 4.0, "{s:?}");
            // X_0 is deterministic, so the first step fits a constant
            assert_eq!(s.basis_size, if s.step == 0 { 1 } else { 3 });
        }
    }
}

//! The linear Hamiltonian system for the state derivatives `(∇X, ∇Y, ∇Z, ∇u)`.
//!
//! Second derivatives of the cost are frozen along the optimal path, which
//! turns the derivative system into an LQ problem with path-dependent
//! weights. It is solved with the same descent as the original problem,
//! one initial direction `eᵢ` at a time.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::adjoint::CostDerivatives;
use crate::descent::{run_descent, DescentConfig, DescentReport, HamiltonianSolution, Oracle};
use crate::error::{LcfError, Result};
use crate::linalg::{det_sum, dot, slice_mat_t_vec_acc, slice_mat_vec_acc, symmetrize};
use crate::paths::{PathArray, TimeGrid};
use crate::problem::ProblemSpec;
use crate::regression::RegressionBasis;
use crate::riccati::RiccatiSolution;

/// Cost Hessians along `(X̄, ū)`, stored column-major per (path, step).
#[derive(Debug, Clone)]
pub struct FrozenQuadratic {
    pub n: usize,
    pub m: usize,
    /// `D²ₓₓl`, `n×n` per step.
    pub q: PathArray,
    /// `D²ᵤₓl`, `m×n` per step.
    pub s: PathArray,
    /// `D²ᵤᵤl`, `m×m` per step.
    pub r: PathArray,
    /// `D²ₓₓg(X̄_T)`, `n×n`, one node.
    pub g: PathArray,
    /// The optimal state `X̄`, used as extra regression features.
    pub anchor: PathArray,
    /// Largest Hessian spectral norm met while freezing.
    pub max_hessian: f64,
    /// Largest relative asymmetry repaired while freezing.
    pub max_asymmetry: f64,
}

fn put(dst: &mut [f64], m: &DMatrix<f64>) {
    dst.copy_from_slice(m.as_slice());
}

/// Evaluates the cost Hessians along the solution and symmetrizes them.
pub fn freeze_second_order(spec: &ProblemSpec, sol: &HamiltonianSolution) -> Result<FrozenQuadratic> {
    let (n, m) = (spec.dims.n, spec.dims.m);
    let grid = sol.x.grid;
    let steps = grid.steps;
    let paths = sol.x.paths();
    let mut q = PathArray::zeros(paths, steps, n * n);
    let mut s = PathArray::zeros(paths, steps, m * n);
    let mut r = PathArray::zeros(paths, steps, m * m);
    let mut g = PathArray::zeros(paths, 1, n * n);

    let mut per_path: Vec<(f64, f64)> = Vec::with_capacity(steps + 1);
    for k in 0..steps {
        let t = grid.node(k);
        let worst = q
            .node_mut(k)
            .par_chunks_mut(n * n)
            .zip(s.node_mut(k).par_chunks_mut(m * n))
            .zip(r.node_mut(k).par_chunks_mut(m * m))
            .enumerate()
            .map(|(p, ((qd, sd), rd))| {
                let h = spec.cost.running_hessian(t, sol.x.x(p, k), sol.u.u(p, k));
                let (qs, a1) = symmetrize(&h.xx);
                let (rs, a2) = symmetrize(&h.uu);
                put(qd, &qs);
                put(sd, &h.ux);
                put(rd, &rs);
                (crate::linalg::sym_spectral_norm(&h.full()), a1.max(a2))
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
        per_path.push(worst);
    }
    let worst = g
        .node_mut(0)
        .par_chunks_mut(n * n)
        .enumerate()
        .map(|(p, gd)| {
            let (gs, a3) = symmetrize(&spec.cost.terminal_hessian(sol.x.x(p, steps)));
            put(gd, &gs);
            (crate::linalg::sym_spectral_norm(&gs), a3)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    per_path.push(worst);
    let max_hessian = per_path.iter().map(|v| v.0).fold(0.0, f64::max);
    let max_asymmetry = per_path.iter().map(|v| v.1).fold(0.0, f64::max);
    let bound = spec.hessian_bound();
    if max_hessian > 1.01 * bound {
        log::warn!("frozen Hessian sample {max_hessian:.4} exceeds the declared bound {bound:.4}");
    }
    if max_asymmetry > 1e-10 {
        log::warn!("frozen Hessians needed symmetrizing (relative asymmetry {max_asymmetry:.3e})");
    }
    Ok(FrozenQuadratic { n, m, q, s, r, g, anchor: sol.x.values.clone(), max_hessian, max_asymmetry })
}

impl CostDerivatives for FrozenQuadratic {
    fn terminal_value(&self, p: usize, x: &[f64]) -> f64 {
        let mut gx = vec![0.0; self.n];
        slice_mat_vec_acc(self.g.at(p, 0), self.n, x, 1.0, &mut gx);
        0.5 * dot(&gx, x)
    }

    fn terminal_grad(&self, p: usize, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        slice_mat_vec_acc(self.g.at(p, 0), self.n, x, 1.0, out);
    }

    fn running_value(&self, p: usize, k: usize, _t: f64, x: &[f64], u: &[f64]) -> f64 {
        let mut qx = vec![0.0; self.n];
        slice_mat_vec_acc(self.q.at(p, k), self.n, x, 1.0, &mut qx);
        let mut sx = vec![0.0; self.m];
        slice_mat_vec_acc(self.s.at(p, k), self.m, x, 1.0, &mut sx);
        let mut ru = vec![0.0; self.m];
        slice_mat_vec_acc(self.r.at(p, k), self.m, u, 1.0, &mut ru);
        0.5 * dot(&qx, x) + dot(&sx, u) + 0.5 * dot(&ru, u)
    }

    fn running_grad_x(&self, p: usize, k: usize, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        slice_mat_vec_acc(self.q.at(p, k), self.n, x, 1.0, out);
        slice_mat_t_vec_acc(self.s.at(p, k), self.m, u, 1.0, out);
    }

    fn running_grad_u(&self, p: usize, k: usize, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        slice_mat_vec_acc(self.s.at(p, k), self.m, x, 1.0, out);
        slice_mat_vec_acc(self.r.at(p, k), self.m, u, 1.0, out);
    }
}

/// Derivatives of the optimal quadruple in the initial state. Each entry
/// is a column-major matrix whose column `i` belongs to direction `eᵢ`.
#[derive(Debug, Clone)]
pub struct DerivativeSolution {
    pub grid: TimeGrid,
    pub n: usize,
    /// `∇X`, `n×n` on `N+1` nodes.
    pub dx: PathArray,
    /// `∇Y`, `n×n` on `N+1` nodes.
    pub dy: PathArray,
    /// `∇Z`, `(n·d)×n` on `N` steps.
    pub dz: PathArray,
    /// `∇u`, `m×n` on `N` steps.
    pub du: PathArray,
    pub reports: Vec<DescentReport>,
}

impl DerivativeSolution {
    pub fn matrix(arr: &PathArray, rows: usize, p: usize, k: usize) -> DMatrix<f64> {
        let v = arr.at(p, k);
        DMatrix::from_column_slice(rows, v.len() / rows, v)
    }
}

/// Solves the linear Hamiltonian system for every initial direction.
///
/// The dynamics are the problem's own with `b = σ = 0`; the cost is the
/// frozen quadratic model. Regression features are `(∇X_k, X̄_k)`.
pub fn solve_linear_hamiltonian(
    spec: &ProblemSpec,
    sol: &HamiltonianSolution,
    frozen: &FrozenQuadratic,
    basis: RegressionBasis,
    cfg: &DescentConfig,
) -> Result<DerivativeSolution> {
    let (n, m, d) = (spec.dims.n, spec.dims.m, spec.dims.d);
    let mut dyn_spec = spec.clone();
    dyn_spec.coeffs = spec.coeffs.homogeneous();
    let noise = &sol.noise;
    let grid = noise.grid;
    let steps = grid.steps;
    let paths = noise.paths();

    let mut dx = PathArray::zeros(paths, steps + 1, n * n);
    let mut dy = PathArray::zeros(paths, steps + 1, n * n);
    let mut dz = PathArray::zeros(paths, steps, n * d * n);
    let mut du = PathArray::zeros(paths, steps, m * n);
    let mut reports = Vec::with_capacity(n);

    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let oracle = Oracle { spec: &dyn_spec, cost: frozen, anchor: Some(&frozen.anchor), x0: &e, noise, basis };
        // the frozen model has the same second variation as J at ū
        let k = spec.certificate.k_lip.or(sol.report.k_hat);
        let out = run_descent(&oracle, spec.certificate.delta, k, cfg, None)
            .map_err(|err| LcfError::Direction { direction: i, source: Box::new(err) })?;
        let ev = &out.eval;
        scatter_column(&mut dx, &ev.x.values, i, n);
        scatter_column(&mut dy, &ev.adjoint.y, i, n);
        scatter_column(&mut dz, &ev.adjoint.z, i, n * d);
        scatter_column(&mut du, &out.u.values, i, m);
        reports.push(out.report);
    }
    Ok(DerivativeSolution { grid, n, dx, dy, dz, du, reports })
}

fn scatter_column(dst: &mut PathArray, src: &PathArray, col: usize, rows: usize) {
    let width = dst.dim;
    let paths = src.paths;
    dst.data.par_chunks_mut(width).enumerate().for_each(|(i, slot)| {
        let (k, p) = (i / paths, i % paths);
        slot[col * rows..(col + 1) * rows].copy_from_slice(src.at(p, k));
    });
}

/// `D²ₓₓV` at the initial node with its diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct HessianEstimate {
    /// Row-major `n×n`, symmetrized.
    pub matrix: Vec<f64>,
    pub n: usize,
    /// Relative asymmetry before symmetrizing.
    pub asymmetry: f64,
    /// Largest cross-path standard deviation of an entry.
    pub cross_path_std: f64,
}

impl HessianEstimate {
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.matrix)
    }
}

/// Cross-path spread of `∇Y_t` beyond which the estimate is rejected.
const HESSIAN_NOISE_TOL: f64 = 1e-6;

/// Reads `D²ₓₓV(t, x) = ∇Y_t` off the derivative solution.
pub fn hessian_from_derivative(deriv: &DerivativeSolution) -> Result<HessianEstimate> {
    let n = deriv.n;
    let paths = deriv.dy.paths;
    let mut mean = DMatrix::zeros(n, n);
    let mut worst_std = 0.0f64;
    for c in 0..n * n {
        let mu = det_sum(paths, |p| deriv.dy.at(p, 0)[c]) / paths as f64;
        let var = det_sum(paths, |p| (deriv.dy.at(p, 0)[c] - mu).powi(2)) / paths as f64;
        mean[(c % n, c / n)] = mu;
        worst_std = worst_std.max(var.sqrt());
    }
    let (sym, asymmetry) = symmetrize(&mean);
    let scale = 1.0 + sym.amax();
    if worst_std > 10.0 * HESSIAN_NOISE_TOL * scale {
        return Err(LcfError::Noise(format!(
            "∇Y at the initial node varies across paths (std {worst_std:.3e})"
        )));
    }
    let asymmetry = if mean.amax() == 0.0 { 0.0 } else { asymmetry };
    Ok(HessianEstimate {
        matrix: sym.transpose().as_slice().to_vec(),
        n,
        asymmetry,
        cross_path_std: worst_std,
    })
}

/// Statistics of `P̂ = ∇Y(∇X)⁻¹` at one grid node.
#[derive(Debug, Clone, Serialize)]
pub struct RiccatiStateRow {
    pub t: f64,
    /// Column-major mean of `P̂` over the sampled paths.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub oracle: Option<Vec<f64>>,
    /// Largest `‖P̂ − P‖ / max(‖P‖, 1)` over sampled paths at this node.
    pub max_rel_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RiccatiStateReport {
    pub rows: Vec<RiccatiStateRow>,
    pub sampled_paths: usize,
    pub min_abs_det: f64,
    /// Samples with `|det ∇X| < 1e-10`; flagged, not fatal.
    pub near_singular: usize,
    pub max_symmetry_defect: f64,
    pub max_rel_error: Option<f64>,
}

impl RiccatiStateReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let len = self.rows.first().map_or(0, |r| r.mean.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..len).map(|c| format!("p_mean_{c}")));
        header.extend((0..len).map(|c| format!("p_std_{c}")));
        header.extend((0..len).map(|c| format!("p_oracle_{c}")));
        header.push("max_rel_error".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.t.to_string()];
            rec.extend(r.mean.iter().map(|v| v.to_string()));
            rec.extend(r.std.iter().map(|v| v.to_string()));
            match &r.oracle {
                Some(o) => rec.extend(o.iter().map(|v| v.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), len)),
            }
            rec.push(r.max_rel_error.map_or(String::new(), |v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Forms `P̂ = ∇Y(∇X)⁻¹` on the first `sample_paths` paths at every node
/// and compares it with the oracle when one is given.
pub fn riccati_state_check(
    deriv: &DerivativeSolution,
    oracle: Option<&RiccatiSolution>,
    sample_paths: usize,
) -> RiccatiStateReport {
    let n = deriv.n;
    let paths = deriv.dx.paths.min(sample_paths.max(1));
    let grid = deriv.grid;
    let mut rows = Vec::with_capacity(grid.steps + 1);
    let mut min_det = f64::INFINITY;
    let mut near_singular = 0;
    let mut max_sym = 0.0f64;
    let mut max_err: Option<f64> = None;
    for k in 0..=grid.steps {
        let t = grid.node(k);
        let reference = oracle.map(|o| o.p_at(t));
        let mut sum = DMatrix::zeros(n, n);
        let mut sum_sq = DMatrix::zeros(n, n);
        let mut count = 0usize;
        let mut node_err: Option<f64> = None;
        for p in 0..paths {
            let gx = DerivativeSolution::matrix(&deriv.dx, n, p, k);
            let gy = DerivativeSolution::matrix(&deriv.dy, n, p, k);
            let lu = gx.clone().lu();
            let det = lu.determinant().abs();
            min_det = min_det.min(det);
            if det < 1e-10 {
                near_singular += 1;
                continue;
            }
            let Some(inv) = lu.try_inverse() else {
                near_singular += 1;
                continue;
            };
            let ph = &gy * inv;
            let (_, defect) = symmetrize(&ph);
            if ph.amax() > 0.0 {
                max_sym = max_sym.max(defect);
            }
            if let Some(pr) = &reference {
                let e = (&ph - pr).norm() / pr.norm().max(1.0);
                node_err = Some(node_err.map_or(e, |v: f64| v.max(e)));
            }
            sum_sq += ph.component_mul(&ph);
            sum += ph;
            count += 1;
        }
        let c = count.max(1) as f64;
        let mean = &sum / c;
        let var = (&sum_sq / c - mean.component_mul(&mean)).map(|v| v.max(0.0).sqrt());
        if let Some(e) = node_err {
            max_err = Some(max_err.map_or(e, |v: f64| v.max(e)));
        }
        rows.push(RiccatiStateRow {
            t,
            mean: mean.as_slice().to_vec(),
            std: var.as_slice().to_vec(),
            oracle: reference.map(|r| r.as_slice().to_vec()),
            max_rel_error: node_err,
        });
    }
    RiccatiStateReport {
        rows,
        sampled_paths: paths,
        min_abs_det: min_det,
        near_singular,
        max_symmetry_defect: max_sym,
        max_rel_error: max_err,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descent::solve_hamiltonian;
    use crate::paths::{generate_brownian, TimeGrid};
    use crate::problem::presets;

    fn solve(spec: &ProblemSpec, x0: f64, paths: usize) -> HamiltonianSolution {
        let w = generate_brownian(TimeGrid::new(0.0, 1.0, 20).unwrap(), paths, 1, 3, true).unwrap();
        solve_hamiltonian(spec, 0.0, &[x0], &w, RegressionBasis::default(), &DescentConfig::default()).unwrap()
    }

    #[test]
    fn lq_freeze_is_constant() {
        let spec = presets::p1(0.3);
        let sol = solve(&spec, 0.5, 500);
        let f = freeze_second_order(&spec, &sol).unwrap();
        assert!(f.q.data.iter().all(|v| *v == 1.0));
        assert!(f.r.data.iter().all(|v| *v == 1.0));
        assert!(f.s.data.iter().all(|v| *v == 0.0));
        assert!(f.g.data.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn smooth_freeze_matches_finite_differences() {
        let spec = presets::p2();
        let sol = solve(&spec, 0.5, 500);
        let f = freeze_second_order(&spec, &sol).unwrap();
        for p in (0..500).step_by(50) {
            for k in [0, 7, 19] {
                let x = sol.x.x(p, k)[0];
                let u = sol.u.u(p, k);
                let h = 1e-4 * (1.0 + x.abs());
                let mut gp = [0.0];
                let mut gm = [0.0];
                spec.cost.running_grad_x(0.0, &[x + h], u, &mut gp);
                spec.cost.running_grad_x(0.0, &[x - h], u, &mut gm);
                let fd = (gp[0] - gm[0]) / (2.0 * h);
                assert!((fd - f.q.at(p, k)[0]).abs() <= 1e-4 * fd.abs().max(1.0));
            }
        }
        // at X̄ = 0 the curvature of the smoothed state term is κ
        let mut probe = sol.clone();
        probe.x.values.at_mut(0, 3)[0] = 0.0;
        let f0 = freeze_second_order(&spec, &probe).unwrap();
        assert_eq!(f0.q.at(0, 3)[0], 0.5);
    }

    #[test]
    fn zero_problem_derivatives() {
        let spec = presets::zero_problem();
        let sol = solve(&spec, 0.0, 64);
        let f = freeze_second_order(&spec, &sol).unwrap();
        let deriv = solve_linear_hamiltonian(&spec, &sol, &f, RegressionBasis::default(), &DescentConfig::default()).unwrap();
        assert!(deriv.du.data.iter().all(|v| *v == 0.0));
        assert!(deriv.dy.data.iter().all(|v| *v == 0.0));
        assert!(deriv.dx.data.iter().all(|v| *v == 1.0));
        let h = hessian_from_derivative(&deriv).unwrap();
        assert_eq!(h.matrix, vec![0.0]);
        let rep = riccati_state_check(&deriv, None, 10);
        assert!(rep.rows.iter().all(|r| r.mean == vec![0.0]));
    }
}

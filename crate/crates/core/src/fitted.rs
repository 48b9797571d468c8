//! A value surface fitted from one optimal solve: at every node the
//! realized cost-to-go, `Ȳ` and `P̂ = ∇Y(∇X)⁻¹` are regressed on `X̄_k`.
//! Queries between nodes use the left node; queries outside the sampled
//! box are clamped to it and counted. [`LatticeSource`] tabulates the fit
//! for fast closed-loop evaluation.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::descent::HamiltonianSolution;
use crate::error::{argument, Result};
use crate::linalg::{mean_std, symmetrize};
use crate::paths::TimeGrid;
use crate::problem::ProblemSpec;
use crate::regression::{Design, RegressionBasis};
use crate::value::{ValueDiagnostics, ValueSample, ValueSource};
use crate::variational::DerivativeSolution;

struct NodeFit {
    design: Design,
    /// Columns: cost-to-go, `Ȳ` (n), `P̂` column-major (n²).
    coef: DMatrix<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    stderr_v: f64,
}

pub struct FittedSource {
    grid: TimeGrid,
    n: usize,
    nodes: Vec<NodeFit>,
    spec: ProblemSpec,
    clamped: AtomicUsize,
    queries: AtomicUsize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FittedSourceStats {
    pub queries: usize,
    pub clamped: usize,
    pub skipped_singular: usize,
}

impl FittedSource {
    /// `box_sd` sets the half-width of the clamping box in cross-path
    /// standard deviations of `X̄_k`.
    pub fn new(
        spec: &ProblemSpec,
        sol: &HamiltonianSolution,
        deriv: &DerivativeSolution,
        basis: RegressionBasis,
        box_sd: f64,
    ) -> Result<(Self, usize)> {
        let n = spec.dims.n;
        let grid = sol.x.grid;
        let paths = sol.x.paths();
        if deriv.grid != grid || deriv.dx.paths != paths {
            return Err(argument("the derivative solution belongs to a different ensemble"));
        }
        let dt = grid.dt();
        let mut to_go = vec![0.0; paths];
        for (p, slot) in to_go.iter_mut().enumerate() {
            *slot = spec.cost.terminal_value(sol.x.x(p, grid.steps));
        }
        let mut skipped = 0;
        let mut nodes = Vec::with_capacity(grid.steps);
        let mut per_node = Vec::with_capacity(grid.steps);
        for k in (0..grid.steps).rev() {
            let t = grid.node(k);
            for (p, slot) in to_go.iter_mut().enumerate() {
                *slot += spec.cost.running_value(t, sol.x.x(p, k), sol.u.u(p, k)) * dt;
            }
            // rows with an invertible ∇X only
            let mut keep = Vec::with_capacity(paths);
            let mut phat = Vec::with_capacity(paths * n * n);
            for p in 0..paths {
                let gx = DerivativeSolution::matrix(&deriv.dx, n, p, k);
                let gy = DerivativeSolution::matrix(&deriv.dy, n, p, k);
                let lu = gx.lu();
                if lu.determinant().abs() < 1e-10 {
                    skipped += 1;
                    continue;
                }
                let Some(inv) = lu.try_inverse() else {
                    skipped += 1;
                    continue;
                };
                keep.push(p);
                phat.extend_from_slice((gy * inv).as_slice());
            }
            if keep.is_empty() {
                return Err(argument(format!("no path has an invertible state derivative at t = {t}")));
            }
            let q = 1 + n + n * n;
            let mut features = Vec::with_capacity(keep.len() * n);
            let mut targets = vec![0.0; keep.len() * q];
            for (r, &p) in keep.iter().enumerate() {
                features.extend_from_slice(sol.x.x(p, k));
                let row = &mut targets[r * q..(r + 1) * q];
                row[0] = to_go[p];
                row[1..=n].copy_from_slice(sol.adjoint.y.at(p, k));
                row[1 + n..].copy_from_slice(&phat[r * n * n..(r + 1) * n * n]);
            }
            let design = Design::new(basis, &features, keep.len(), n, k)?;
            let fit = design.fit(&targets, q);
            let mut lo = vec![0.0; n];
            let mut hi = vec![0.0; n];
            for j in 0..n {
                let col: Vec<f64> = keep.iter().map(|&p| sol.x.x(p, k)[j]).collect();
                let (mu, sd) = mean_std(&col);
                lo[j] = mu - box_sd * sd;
                hi[j] = mu + box_sd * sd;
            }
            let resid: Vec<f64> = (0..keep.len()).map(|r| targets[r * q] - fit.fitted[r * q]).collect();
            let (_, sd) = mean_std(&resid);
            per_node.push(NodeFit { design, coef: fit.coef, lo, hi, stderr_v: sd / (keep.len() as f64).sqrt() });
        }
        per_node.reverse();
        nodes.extend(per_node);
        Ok((
            Self {
                grid,
                n,
                nodes,
                spec: spec.clone(),
                clamped: AtomicUsize::new(0),
                queries: AtomicUsize::new(0),
            },
            skipped,
        ))
    }

    pub fn stats(&self, skipped_singular: usize) -> FittedSourceStats {
        FittedSourceStats {
            queries: self.queries.load(Ordering::Relaxed),
            clamped: self.clamped.load(Ordering::Relaxed),
            skipped_singular,
        }
    }

    fn node_index(&self, t: f64) -> Result<usize> {
        let s = (t - self.grid.t0) / self.grid.dt();
        if s < -1e-9 || t > self.grid.t_end + 1e-12 {
            return Err(argument(format!("t = {t} lies outside [{}, {}]", self.grid.t0, self.grid.t_end)));
        }
        let k = (s + 1e-9).floor().max(0.0) as usize;
        Ok(k.min(self.grid.steps))
    }
}

impl ValueSource for FittedSource {
    fn label(&self) -> &str {
        "fitted"
    }

    fn sample(&self, t: f64, x: &[f64]) -> Result<ValueSample> {
        let n = self.n;
        if x.len() != n {
            return Err(argument("query point has the wrong dimension"));
        }
        self.queries.fetch_add(1, Ordering::Relaxed);
        let k = self.node_index(t)?;
        if k == self.grid.steps {
            let cost = &self.spec.cost;
            let mut dv = vec![0.0; n];
            cost.terminal_grad(x, &mut dv);
            let h = cost.terminal_hessian(x);
            return Ok(ValueSample {
                t,
                x: x.to_vec(),
                v: cost.terminal_value(x),
                dv,
                dvv: Some(h.transpose().as_slice().to_vec()),
                stderr_v: 0.0,
                dv_cross_path_std: 0.0,
                diagnostics: ValueDiagnostics::default(),
            });
        }
        let node = &self.nodes[k];
        let mut xc = x.to_vec();
        let mut clamped = false;
        for j in 0..n {
            let c = xc[j].clamp(node.lo[j], node.hi[j]);
            clamped |= c != xc[j];
            xc[j] = c;
        }
        if clamped {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
        let out = node.design.predict_at(&xc, &node.coef);
        let (h, asym) = symmetrize(&DMatrix::from_column_slice(n, n, &out[1 + n..]));
        Ok(ValueSample {
            t,
            x: x.to_vec(),
            v: out[0],
            dv: out[1..=n].to_vec(),
            dvv: Some(h.transpose().as_slice().to_vec()),
            stderr_v: node.stderr_v,
            dv_cross_path_std: 0.0,
            diagnostics: ValueDiagnostics { hessian_asymmetry: Some(asym), ..Default::default() },
        })
    }
}

/// `(V, DₓV, D²ₓₓV)` tabulated from a [`FittedSource`] on a rectangular
/// lattice at every node and interpolated multilinearly.
pub struct LatticeSource {
    fitted: FittedSource,
    spacing: f64,
    tables: Vec<Table>,
    /// Largest `|DₓV|` interpolation error measured on the half-spacing
    /// lattice.
    pub refinement_error: f64,
}

struct Table {
    lo: Vec<f64>,
    counts: Vec<usize>,
    /// `1 + n + n²` values per lattice point, first axis fastest.
    values: Vec<f64>,
}

const MAX_LATTICE_POINTS: usize = 1 << 20;

impl Table {
    fn build(src: &FittedSource, k: usize, spacing: f64) -> Result<Self> {
        let node = &src.nodes[k];
        let n = src.n;
        let counts: Vec<usize> = (0..n).map(|j| ((node.hi[j] - node.lo[j]) / spacing).ceil() as usize + 1).collect();
        let total: usize = counts.iter().product();
        if total > MAX_LATTICE_POINTS {
            return Err(argument(format!("lattice spacing {spacing} needs {total} points per node")));
        }
        let q = 1 + n + n * n;
        let mut values = Vec::with_capacity(total * q);
        let mut idx = vec![0usize; n];
        let mut x = vec![0.0; n];
        for _ in 0..total {
            for j in 0..n {
                x[j] = (node.lo[j] + idx[j] as f64 * spacing).min(node.hi[j]);
            }
            values.extend(node.design.predict_at(&x, &node.coef));
            for j in 0..n {
                idx[j] += 1;
                if idx[j] < counts[j] {
                    break;
                }
                idx[j] = 0;
            }
        }
        Ok(Self { lo: node.lo.clone(), counts, values })
    }

    fn interpolate(&self, x: &[f64], spacing: f64, q: usize) -> Vec<f64> {
        let n = x.len();
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for j in 0..n {
            let s = ((x[j] - self.lo[j]) / spacing).max(0.0);
            let top = self.counts[j] - 1;
            let i = (s.floor() as usize).min(top.saturating_sub(1));
            base[j] = i;
            frac[j] = if top == 0 { 0.0 } else { (s - i as f64).min(1.0) };
        }
        let mut out = vec![0.0; q];
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut flat = 0;
            let mut stride = 1;
            for j in 0..n {
                let up = (corner >> j) & 1 == 1;
                let i = if up { (base[j] + 1).min(self.counts[j] - 1) } else { base[j] };
                w *= if up { frac[j] } else { 1.0 - frac[j] };
                flat += i * stride;
                stride *= self.counts[j];
            }
            if w != 0.0 {
                for (o, v) in out.iter_mut().zip(&self.values[flat * q..(flat + 1) * q]) {
                    *o += w * v;
                }
            }
        }
        out
    }
}

impl LatticeSource {
    pub fn new(fitted: FittedSource, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(argument("lattice spacing must be positive"));
        }
        let n = fitted.n;
        let q = 1 + n + n * n;
        let tables = (0..fitted.nodes.len()).map(|k| Table::build(&fitted, k, spacing)).collect::<Result<Vec<_>>>()?;
        let mut refinement_error = 0.0f64;
        for (k, table) in tables.iter().enumerate() {
            let fine = Table::build(&fitted, k, spacing / 2.0)?;
            let total = fine.values.len() / q;
            let mut idx = vec![0usize; n];
            for r in 0..total {
                let x: Vec<f64> =
                    (0..n).map(|j| (fine.lo[j] + idx[j] as f64 * spacing / 2.0).min(fitted.nodes[k].hi[j])).collect();
                let coarse = table.interpolate(&x, spacing, q);
                for j in 1..=n {
                    refinement_error = refinement_error.max((coarse[j] - fine.values[r * q + j]).abs());
                }
                for j in 0..n {
                    idx[j] += 1;
                    if idx[j] < fine.counts[j] {
                        break;
                    }
                    idx[j] = 0;
                }
            }
        }
        Ok(Self { fitted, spacing, tables, refinement_error })
    }

    pub fn fitted(&self) -> &FittedSource {
        &self.fitted
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }
}

impl ValueSource for LatticeSource {
    fn label(&self) -> &str {
        "lattice"
    }

    fn sample(&self, t: f64, x: &[f64]) -> Result<ValueSample> {
        let n = self.fitted.n;
        if x.len() != n {
            return Err(argument("query point has the wrong dimension"));
        }
        let k = self.fitted.node_index(t)?;
        if k == self.fitted.grid.steps {
            return self.fitted.sample(t, x);
        }
        self.fitted.queries.fetch_add(1, Ordering::Relaxed);
        let node = &self.fitted.nodes[k];
        let mut xc = x.to_vec();
        let mut clamped = false;
        for j in 0..n {
            let c = xc[j].clamp(node.lo[j], node.hi[j]);
            clamped |= c != xc[j];
            xc[j] = c;
        }
        if clamped {
            self.fitted.clamped.fetch_add(1, Ordering::Relaxed);
        }
        let out = self.tables[k].interpolate(&xc, self.spacing, 1 + n + n * n);
        let (h, asym) = symmetrize(&DMatrix::from_column_slice(n, n, &out[1 + n..]));
        Ok(ValueSample {
            t,
            x: x.to_vec(),
            v: out[0],
            dv: out[1..=n].to_vec(),
            dvv: Some(h.transpose().as_slice().to_vec()),
            stderr_v: node.stderr_v,
            dv_cross_path_std: 0.0,
            diagnostics: ValueDiagnostics { hessian_asymmetry: Some(asym), ..Default::default() },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descent::{solve_hamiltonian, DescentConfig};
    use crate::paths::generate_brownian;
    use crate::problem::presets;
    use crate::variational::{freeze_second_order, solve_linear_hamiltonian};

    #[test]
    fn p1_surface_reproduces_the_quadratic_value() {
        let spec = presets::p1(0.3);
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let w = generate_brownian(grid, 2000, 1, 9, true).unwrap();
        let basis = RegressionBasis::default();
        let cfg = DescentConfig::default();
        let sol = solve_hamiltonian(&spec, 0.0, &[0.5], &w, basis, &cfg).unwrap();
        let frozen = freeze_second_order(&spec, &sol).unwrap();
        let deriv = solve_linear_hamiltonian(&spec, &sol, &frozen, basis, &cfg).unwrap();
        let (src, skipped) = FittedSource::new(&spec, &sol, &deriv, basis, 4.0).unwrap();
        assert_eq!(skipped, 0);
        // V(t,x) = ½x² + 0.045(1 − t)
        let s = src.sample(0.5, &[0.4]).unwrap();
        assert!((s.dv[0] - 0.4).abs() < 0.02, "{:?}", s.dv);
        assert!((s.hessian().unwrap()[(0, 0)] - 1.0).abs() < 0.05);
        assert!((s.v - (0.08 + 0.0225)).abs() < 0.01, "{}", s.v);
        let far = src.sample(0.5, &[40.0]).unwrap();
        assert!(far.dv[0] < 40.0);
        assert_eq!(src.stats(0).clamped, 1);
        let end = src.sample(1.0, &[2.0]).unwrap();
        assert_eq!(end.v, 2.0);
        assert!(src.sample(1.5, &[0.0]).is_err());

        let lattice = LatticeSource::new(src, 0.05).unwrap();
        assert!(lattice.refinement_error < 0.05, "{}", lattice.refinement_error);
        let a = lattice.sample(0.5, &[0.4]).unwrap();
        let b = lattice.fitted().sample(0.5, &[0.4]).unwrap();
        assert!((a.dv[0] - b.dv[0]).abs() < 1e-3);
        assert_eq!(lattice.sample(0.0, &[3.0]).unwrap().dv, lattice.sample(0.0, &[0.5]).unwrap().dv);
    }
}

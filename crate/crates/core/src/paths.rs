//! Time grids, seeded Brownian ensembles and Euler–Maruyama simulation of
//! the controlled linear SDE.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{argument, LcfError, Result};
use crate::linalg::{det_sum, mat_vec_acc};
use crate::problem::{CoeffSnapshot, ProblemSpec};

/// Absolute states above this are treated as a numerical blow-up.
pub const BLOWUP_LIMIT: f64 = 1e12;

const MAGIC: &[u8; 4] = b"LCF1";

/// Uniform grid `t_k = t0 + kΔt`, `k = 0..=N`, with `t_N = T` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        if !(t0 < t_end) || !t0.is_finite() || !t_end.is_finite() {
            return Err(argument(format!("time grid needs t0 < T, got [{t0}, {t_end}]")));
        }
        if steps == 0 {
            return Err(argument("time grid needs at least one step"));
        }
        Ok(Self { t0, t_end, steps, dt: (t_end - t0) / steps as f64 })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn node(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.t_end
        } else {
            self.t0 + k as f64 * self.dt
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }

    /// Index of the node at `t`, tolerating rounding noise.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let s = (t - self.t0) / self.dt;
        let k = s.round();
        if k < 0.0 || k > self.steps as f64 || (s - k).abs() > 1e-7 {
            return Err(argument(format!(
                "t = {t} is not a node of the grid on [{}, {}] with {} steps",
                self.t0, self.t_end, self.steps
            )));
        }
        Ok(k as usize)
    }

    /// The grid from node `start` to the end, sharing the same nodes.
    pub fn tail(&self, start: usize) -> Result<Self> {
        if start >= self.steps {
            return Err(argument(format!("cannot start at node {start} of a {}-step grid", self.steps)));
        }
        Ok(Self {
            t0: self.node(start),
            t_end: self.t_end,
            steps: self.steps - start,
            dt: self.dt,
        })
    }
}

/// Dense per-path array stored node-major: the values of all paths at one
/// node are contiguous, so backward sweeps over nodes stream through memory.
#[derive(Debug, Clone, PartialEq)]
pub struct PathArray {
    pub paths: usize,
    pub nodes: usize,
    pub dim: usize,
    /// Index `(k · paths + p) · dim + j`.
    pub data: Vec<f64>,
}

impl PathArray {
    pub fn zeros(paths: usize, nodes: usize, dim: usize) -> Self {
        Self { paths, nodes, dim, data: vec![0.0; paths * nodes * dim] }
    }

    pub fn from_fn(paths: usize, nodes: usize, dim: usize, f: impl Fn(usize, usize, usize) -> f64 + Sync) -> Self {
        let mut out = Self::zeros(paths, nodes, dim);
        let block = paths * dim;
        if block > 0 {
            out.data.par_chunks_mut(block).enumerate().for_each(|(k, b)| {
                for (i, v) in b.iter_mut().enumerate() {
                    *v = f(i / dim, k, i % dim);
                }
            });
        }
        out
    }

    /// Builds the array one path at a time: `fill(p, row)` writes path `p`
    /// as a `nodes × dim` row-major slice.
    pub fn from_path_rows(paths: usize, nodes: usize, dim: usize, fill: impl Fn(usize, &mut [f64]) + Sync) -> Self {
        let width = nodes * dim;
        let mut rows = vec![0.0; paths * width];
        if width > 0 {
            rows.par_chunks_mut(width).enumerate().for_each(|(p, r)| fill(p, r));
        }
        let mut out = Self::zeros(paths, nodes, dim);
        let block = paths * dim;
        if block > 0 {
            out.data.par_chunks_mut(block).enumerate().for_each(|(k, b)| {
                for p in 0..paths {
                    b[p * dim..(p + 1) * dim].copy_from_slice(&rows[p * width + k * dim..p * width + (k + 1) * dim]);
                }
            });
        }
        out
    }

    #[inline]
    pub fn at(&self, p: usize, k: usize) -> &[f64] {
        let o = (k * self.paths + p) * self.dim;
        &self.data[o..o + self.dim]
    }

    #[inline]
    pub fn at_mut(&mut self, p: usize, k: usize) -> &mut [f64] {
        let o = (k * self.paths + p) * self.dim;
        &mut self.data[o..o + self.dim]
    }

    /// All paths at node `k`, `paths × dim` row-major.
    #[inline]
    pub fn node(&self, k: usize) -> &[f64] {
        let w = self.paths * self.dim;
        &self.data[k * w..(k + 1) * w]
    }

    #[inline]
    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        let w = self.paths * self.dim;
        &mut self.data[k * w..(k + 1) * w]
    }

    /// Copy of path `p`, `nodes × dim` row-major.
    pub fn path(&self, p: usize) -> Vec<f64> {
        (0..self.nodes).flat_map(|k| self.at(p, k).iter().copied()).collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.paths == other.paths && self.nodes == other.nodes && self.dim == other.dim
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        assert!(self.same_shape(other), "axpy on arrays of different shape");
        self.data
            .par_iter_mut()
            .zip(other.data.par_iter())
            .for_each(|(a, b)| *a += alpha * b);
    }

    /// Mean over paths at node `k`.
    pub fn mean_at(&self, k: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|j| det_sum(self.paths, |p| self.at(p, k)[j]) / self.paths as f64)
            .collect()
    }

    /// `(1/M) Σ_p Σ_{k<nodes} ⟨a, b⟩ · dt` with a fixed reduction order.
    pub fn inner(&self, other: &Self, dt: f64) -> f64 {
        assert!(self.same_shape(other), "inner product of arrays of different shape");
        det_sum(self.data.len(), |i| self.data[i] * other.data[i]) * dt / self.paths as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.par_iter().all(|v| v.is_finite())
    }

    /// Writes the binary dump: `LCF1`, then `paths`, `nodes`, `dim` as
    /// little-endian u64, then the data in storage order (node-major) as
    /// little-endian f64.
    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        for v in [self.paths, self.nodes, self.dim] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 28 || &bytes[..4] != MAGIC {
            return Err(LcfError::Structural("not an LCF1 ensemble dump".into()));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[4 + 8 * i..12 + 8 * i].try_into().unwrap()) as usize;
        let (paths, nodes, dim) = (word(0), word(1), word(2));
        let count = paths * nodes * dim;
        if bytes.len() != 28 + 8 * count {
            return Err(LcfError::Structural("ensemble dump has the wrong length".into()));
        }
        let data = bytes[28..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { paths, nodes, dim, data })
    }

    /// Per-path trajectories as CSV rows `path,t,v0,v1,...` for the first
    /// `max_paths` paths.
    pub fn write_csv(&self, path: impl AsRef<Path>, grid: &TimeGrid, max_paths: usize, prefix: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["path".to_string(), "t".to_string()];
        header.extend((0..self.dim).map(|j| format!("{prefix}{j}")));
        w.write_record(&header)?;
        for p in 0..self.paths.min(max_paths) {
            for k in 0..self.nodes {
                let mut rec = vec![p.to_string(), grid.node(k).to_string()];
                rec.extend(self.at(p, k).iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Brownian increments `ΔW[path][step][coordinate]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianEnsemble {
    pub grid: TimeGrid,
    pub seed: u64,
    pub antithetic: bool,
    pub increments: PathArray,
}

impl BrownianEnsemble {
    pub fn paths(&self) -> usize {
        self.increments.paths
    }

    pub fn dim(&self) -> usize {
        self.increments.dim
    }

    #[inline]
    pub fn dw(&self, p: usize, k: usize) -> &[f64] {
        self.increments.at(p, k)
    }

    /// The same noise seen from node `start` onwards.
    pub fn restrict(&self, start: usize) -> Result<Self> {
        if start == 0 {
            return Ok(self.clone());
        }
        let grid = self.grid.tail(start)?;
        let src = &self.increments;
        let w = src.paths * src.dim;
        let inc = PathArray { paths: src.paths, nodes: grid.steps, dim: src.dim, data: src.data[start * w..].to_vec() };
        Ok(Self { grid, seed: self.seed, antithetic: self.antithetic, increments: inc })
    }
}

/// Draws `paths` paths of `dim`-dimensional Brownian increments on `grid`.
///
/// Path `p` reads its normals from ChaCha stream `p` (or `p/2` for an
/// antithetic pair, whose odd member is negated), in (step, coordinate)
/// order, so each variate is a function of `(seed, path, step, coordinate)`
/// alone.
pub fn generate_brownian(grid: TimeGrid, paths: usize, dim: usize, seed: u64, antithetic: bool) -> Result<BrownianEnsemble> {
    if paths == 0 {
        return Err(argument("need at least one path"));
    }
    if dim == 0 {
        return Err(argument("Brownian dimension must be positive"));
    }
    if antithetic && paths % 2 == 1 {
        return Err(argument(format!("antithetic sampling needs an even path count, got {paths}")));
    }
    let sd = grid.dt().sqrt();
    let inc = PathArray::from_path_rows(paths, grid.steps, dim, |p, row| {
        let (stream, sign) = if antithetic { (p / 2, if p % 2 == 1 { -1.0 } else { 1.0 }) } else { (p, 1.0) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64);
        for v in row.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = sign * sd * z;
        }
    });
    Ok(BrownianEnsemble { grid, seed, antithetic, increments: inc })
}

/// `X[path][node][coordinate]` on `N+1` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEnsemble {
    pub grid: TimeGrid,
    pub values: PathArray,
}

impl StateEnsemble {
    #[inline]
    pub fn x(&self, p: usize, k: usize) -> &[f64] {
        self.values.at(p, k)
    }

    pub fn paths(&self) -> usize {
        self.values.paths
    }
}

/// `u[path][step][coordinate]`; `u[p][k]` acts on `[t_k, t_{k+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlEnsemble {
    pub grid: TimeGrid,
    pub values: PathArray,
    adapted: bool,
}

impl ControlEnsemble {
    pub fn zeros(grid: TimeGrid, paths: usize, dim: usize) -> Self {
        Self { grid, values: PathArray::zeros(paths, grid.steps, dim), adapted: true }
    }

    /// A deterministic control `u(t_k)`, identical on every path.
    pub fn deterministic(grid: TimeGrid, paths: usize, dim: usize, f: impl Fn(f64) -> Vec<f64> + Sync) -> Self {
        let table: Vec<Vec<f64>> = (0..grid.steps).map(|k| f(grid.node(k))).collect();
        let values = PathArray::from_fn(paths, grid.steps, dim, |_, k, j| table[k][j]);
        Self { grid, values, adapted: true }
    }

    /// Wraps raw values. `adapted` records whether `u[p][k]` was computed
    /// from information available at `t_k` only.
    pub fn from_values(grid: TimeGrid, values: PathArray, adapted: bool) -> Result<Self> {
        if values.nodes != grid.steps {
            return Err(argument(format!("control has {} steps, grid has {}", values.nodes, grid.steps)));
        }
        Ok(Self { grid, values, adapted })
    }

    pub fn is_adapted(&self) -> bool {
        self.adapted
    }

    pub fn paths(&self) -> usize {
        self.values.paths
    }

    pub fn dim(&self) -> usize {
        self.values.dim
    }

    #[inline]
    pub fn u(&self, p: usize, k: usize) -> &[f64] {
        self.values.at(p, k)
    }

    /// `self + alpha * other`; adapted iff both are.
    pub fn plus_scaled(&self, alpha: f64, other: &PathArray) -> Self {
        let mut out = self.clone();
        out.values.axpy(alpha, other);
        out
    }

    pub fn and_adapted(mut self, other: bool) -> Self {
        self.adapted &= other;
        self
    }
}

/// `√((1/M) Σ_p Σ_k |u[p][k]|² Δt)`.
pub fn l2_norm(u: &ControlEnsemble) -> f64 {
    l2_norm_array(&u.values, u.grid.dt())
}

pub fn l2_norm_array(a: &PathArray, dt: f64) -> f64 {
    a.inner(a, dt).max(0.0).sqrt()
}

fn check_blowup(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite() && v.abs() <= BLOWUP_LIMIT)
}

/// Coefficients frozen at each left node of `grid`.
pub(crate) fn snapshots<'a>(spec: &'a ProblemSpec, grid: &TimeGrid) -> Vec<CoeffSnapshot<'a>> {
    (0..grid.steps).map(|k| spec.coeffs.at(grid.node(k))).collect()
}

/// One Euler–Maruyama step with coefficients `c`.
#[inline]
pub(crate) fn euler_step(c: &CoeffSnapshot<'_>, dt: f64, x: &[f64], u: &[f64], dw: &[f64], out: &mut [f64]) {
    out.copy_from_slice(x);
    mat_vec_acc(c.a, x, dt, out);
    mat_vec_acc(c.b, u, dt, out);
    for (o, &b) in out.iter_mut().zip(c.drift.as_slice()) {
        *o += b * dt;
    }
    for i in 0..c.noise_dim {
        let w = dw[i];
        if w == 0.0 {
            continue;
        }
        mat_vec_acc(c.c[i], x, w, out);
        mat_vec_acc(c.d[i], u, w, out);
        for (o, &s) in out.iter_mut().zip(c.sigma[i].as_slice()) {
            *o += s * w;
        }
    }
}

pub(crate) fn check_ensembles(spec: &ProblemSpec, u: &ControlEnsemble, w: &BrownianEnsemble) -> Result<()> {
    if u.grid.steps != w.grid.steps || (u.grid.t0 - w.grid.t0).abs() > 1e-12 {
        return Err(argument("control and noise live on different grids"));
    }
    if u.paths() != w.paths() {
        return Err(argument(format!("control has {} paths, noise has {}", u.paths(), w.paths())));
    }
    if u.dim() != spec.dims.m || w.dim() != spec.dims.d {
        return Err(argument("control or noise dimension does not match the problem"));
    }
    Ok(())
}

/// Simulates `X` under control `u` on noise `w`, starting from `x0` at the
/// grid's first node. A blow-up is reported at the earliest step, lowest
/// path index.
pub fn simulate_forward(spec: &ProblemSpec, x0: &[f64], u: &ControlEnsemble, w: &BrownianEnsemble) -> Result<StateEnsemble> {
    check_ensembles(spec, u, w)?;
    if x0.len() != spec.dims.n {
        return Err(argument(format!("initial state has length {}, expected {}", x0.len(), spec.dims.n)));
    }
    if !u.is_adapted() {
        return Err(argument("control ensemble is not marked adapted"));
    }
    let grid = w.grid;
    let n = spec.dims.n;
    let paths = w.paths();
    let dt = grid.dt();
    let snaps = snapshots(spec, &grid);
    let mut values = PathArray::zeros(paths, grid.steps + 1, n);
    for x in values.node_mut(0).chunks_exact_mut(n) {
        x.copy_from_slice(x0);
    }
    let block = paths * n;
    for k in 0..grid.steps {
        let (done, rest) = values.data.split_at_mut((k + 1) * block);
        let cur = &done[k * block..];
        let next = &mut rest[..block];
        let c = &snaps[k];
        let bad = next
            .par_chunks_mut(n)
            .enumerate()
            .filter_map(|(p, out)| {
                euler_step(c, dt, &cur[p * n..(p + 1) * n], u.u(p, k), w.dw(p, k), out);
                (!check_blowup(out)).then_some(p)
            })
            .min();
        if let Some(path) = bad {
            return Err(LcfError::Blowup { path, step: k });
        }
    }
    Ok(StateEnsemble { grid, values })
}

/// Simulates the closed loop `u_k = f(p, k, t_k, X_k)` on `w`, returning
/// the states and the realised (adapted) controls.
pub fn simulate_feedback<F>(spec: &ProblemSpec, x0: &[f64], w: &BrownianEnsemble, feedback: F) -> Result<(StateEnsemble, ControlEnsemble)>
where
    F: Fn(usize, usize, f64, &[f64], &mut [f64]) -> Result<()> + Sync,
{
    if x0.len() != spec.dims.n {
        return Err(argument(format!("initial state has length {}, expected {}", x0.len(), spec.dims.n)));
    }
    if w.dim() != spec.dims.d {
        return Err(argument("noise dimension does not match the problem"));
    }
    let grid = w.grid;
    let (n, m) = (spec.dims.n, spec.dims.m);
    let paths = w.paths();
    let dt = grid.dt();
    let snaps = snapshots(spec, &grid);
    let mut xs = PathArray::zeros(paths, grid.steps + 1, n);
    let mut us = PathArray::zeros(paths, grid.steps, m);
    for x in xs.node_mut(0).chunks_exact_mut(n) {
        x.copy_from_slice(x0);
    }
    let block = paths * n;
    for k in 0..grid.steps {
        let t = grid.node(k);
        let (done, rest) = xs.data.split_at_mut((k + 1) * block);
        let cur = &done[k * block..];
        let next = &mut rest[..block];
        let c = &snaps[k];
        let failures: Vec<(usize, LcfError)> = next
            .par_chunks_mut(n)
            .zip(us.node_mut(k).par_chunks_mut(m))
            .enumerate()
            .filter_map(|(p, (out, uk))| {
                let x = &cur[p * n..(p + 1) * n];
                if let Err(e) = feedback(p, k, t, x, uk) {
                    return Some((p, e));
                }
                euler_step(c, dt, x, uk, w.dw(p, k), out);
                (!check_blowup(out)).then(|| (p, LcfError::Blowup { path: p, step: k }))
            })
            .collect();
        if let Some((_, e)) = failures.into_iter().min_by_key(|f| f.0) {
            return Err(e);
        }
    }
    Ok((StateEnsemble { grid, values: xs }, ControlEnsemble::from_values(grid, us, true)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::presets::{scalar_coeffs, scalar_quadratic};
    use crate::problem::{build_lq_problem, CertificateMode, Dimensions, LQData};

    fn scalar_spec(a: f64, b: f64, drift: f64, sigma: f64) -> ProblemSpec {
        build_lq_problem(LQData {
            dims: Dimensions::new(1, 1, 1).unwrap(),
            horizon: 1.0,
            coeffs: scalar_coeffs(a, b, 0.0, 0.0, drift, sigma),
            cost: scalar_quadratic(1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0),
            delta: 1.0,
            mode: CertificateMode::Case1,
            label: "t".into(),
        })
        .unwrap()
    }

    #[test]
    fn grid_nodes_and_lookup() {
        let g = TimeGrid::new(0.0, 1.0, 3).unwrap();
        assert_eq!(g.node(3), 1.0);
        assert_eq!(g.index_of(1.0 / 3.0).unwrap(), 1);
        assert!(g.index_of(0.5).is_err());
        assert!(TimeGrid::new(1.0, 1.0, 3).is_err());
        let tail = g.tail(1).unwrap();
        assert_eq!(tail.steps, 2);
        assert_eq!(tail.t_end, 1.0);
    }

    #[test]
    fn brownian_is_reproducible_and_antithetic() {
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let a = generate_brownian(g, 4, 2, 7, true).unwrap();
        let b = generate_brownian(g, 4, 2, 7, true).unwrap();
        assert_eq!(a, b);
        for k in 0..10 {
            for i in 0..2 {
                assert_eq!(a.dw(1, k)[i], -a.dw(0, k)[i]);
                assert_eq!(a.dw(3, k)[i], -a.dw(2, k)[i]);
            }
        }
        assert!(generate_brownian(g, 3, 1, 7, true).is_err());
        // the first path does not depend on how many paths are drawn
        let c = generate_brownian(g, 2, 2, 7, true).unwrap();
        assert_eq!(c.increments.path(0), a.increments.path(0));
    }

    #[test]
    fn restricted_noise_is_the_tail() {
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let w = generate_brownian(g, 3, 1, 1, false).unwrap();
        let r = w.restrict(4).unwrap();
        assert_eq!(r.grid.steps, 6);
        assert_eq!(r.dw(2, 0), w.dw(2, 4));
        assert!((r.grid.t0 - 0.4).abs() < 1e-15);
    }

    #[test]
    fn deterministic_drift_integrates_exactly() {
        let spec = scalar_spec(0.0, 0.0, 1.0, 0.0);
        let g = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let w = generate_brownian(g, 3, 1, 2, false).unwrap();
        let u = ControlEnsemble::zeros(g, 3, 1);
        let x = simulate_forward(&spec, &[0.0], &u, &w).unwrap();
        for p in 0..3 {
            for k in 0..=8 {
                assert_eq!(x.x(p, k)[0], g.node(k) - g.t0);
            }
        }
    }

    #[test]
    fn euler_growth_factor() {
        let spec = scalar_spec(1.0, 0.0, 0.0, 0.0);
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let w = generate_brownian(g, 1, 1, 0, false).unwrap();
        let u = ControlEnsemble::zeros(g, 1, 1);
        let x = simulate_forward(&spec, &[1.0], &u, &w).unwrap();
        assert!((x.x(0, 100)[0] - 2.704_813_829_421_529).abs() < 1e-12);
    }

    #[test]
    fn blowup_is_located() {
        let spec = scalar_spec(1e4, 0.0, 0.0, 0.0);
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let w = generate_brownian(g, 2, 1, 0, false).unwrap();
        let u = ControlEnsemble::zeros(g, 2, 1);
        let err = simulate_forward(&spec, &[1.0], &u, &w).unwrap_err();
        assert!(matches!(err, LcfError::Blowup { path: 0, step: 3 }), "{err}");
    }

    #[test]
    fn norms() {
        let g = TimeGrid::new(0.0, 2.0, 40).unwrap();
        assert_eq!(l2_norm(&ControlEnsemble::zeros(g, 5, 1)), 0.0);
        let c = ControlEnsemble::deterministic(g, 5, 2, |_| vec![3.0, 4.0]);
        assert!((l2_norm(&c) - 5.0 * 2f64.sqrt()).abs() < 1e-12);
        let g1 = TimeGrid::new(0.0, 1.0, 2000).unwrap();
        let ramp = ControlEnsemble::deterministic(g1, 2, 1, |t| vec![t]);
        assert!((l2_norm(&ramp) - (1.0f64 / 3.0).sqrt()).abs() < 1e-3);
    }

    #[test]
    fn binary_dump_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let a = PathArray::from_fn(3, 4, 2, |p, k, j| (p * 100 + k * 10 + j) as f64 + 0.5);
        let file = dir.path().join("x.bin");
        a.write_binary(&file).unwrap();
        let bytes = std::fs::read(&file).unwrap();
        assert_eq!(&bytes[..4], b"LCF1");
        assert_eq!(u64::from_le_bytes(bytes[4..12].try_into().unwrap()), 3);
        assert_eq!(PathArray::read_binary(&file).unwrap(), a);
    }
}

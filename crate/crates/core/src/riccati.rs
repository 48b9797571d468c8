//! Riccati oracle for LQ problems with deterministic coefficients.
//!
//! With `R̃ = R + ΣDᵢᵀPDᵢ`, `L = BᵀP + ΣDᵢᵀPCᵢ + S` and
//! `ℓ = Bᵀφ + ΣDᵢᵀPσᵢ + ρ`, the value function is
//! `V(t,x) = ½⟨P x, x⟩ + ⟨φ, x⟩ + c` where
//!
//! ```text
//! −Ṗ = PA + AᵀP + ΣCᵢᵀPCᵢ + Q − LᵀR̃⁻¹L,            P(T) = G
//! −φ̇ = Aᵀφ + Pb + ΣCᵢᵀPσᵢ + q − LᵀR̃⁻¹ℓ,            φ(T) = r
//! −ċ = ⟨φ, b⟩ + ½Σ⟨Pσᵢ, σᵢ⟩ − ½⟨R̃⁻¹ℓ, ℓ⟩,           c(T) = 0
//! ```
//!
//! and the optimal feedback is `u = ΘX + θ` with `Θ = −R̃⁻¹L`, `θ = −R̃⁻¹ℓ`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::adjoint::CostEstimate;
use crate::error::{argument, LcfError, Result};
use crate::linalg::{min_eigenvalue, symmetrize};
use crate::paths::{simulate_feedback, BrownianEnsemble, ControlEnsemble, StateEnsemble, TimeGrid};
use crate::problem::{CoeffSnapshot, ProblemSpec, QuadraticCost};

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    pub p: Vec<DMatrix<f64>>,
    pub phi: Vec<DVector<f64>>,
    pub c: Vec<f64>,
    /// `Θ(t_k)`, `m×n`.
    pub gain: Vec<DMatrix<f64>>,
    /// `θ(t_k)`.
    pub offset: Vec<DVector<f64>>,
    /// `min eig(R + ΣDᵢᵀPDᵢ)` at each node.
    pub margin: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Frozen<'a> {
    c: CoeffSnapshot<'a>,
    q: &'a DMatrix<f64>,
    s: &'a DMatrix<f64>,
    r: &'a DMatrix<f64>,
    ql: &'a DMatrix<f64>,
    rho: &'a DMatrix<f64>,
}

fn frozen<'a>(spec: &'a ProblemSpec, t: f64) -> Frozen<'a> {
    let q = &spec.cost.quadratic;
    Frozen {
        c: spec.coeffs.at(t),
        q: q.state_weight.at(t),
        s: q.cross_weight.at(t),
        r: q.control_weight.at(t),
        ql: q.state_linear.at(t),
        rho: q.control_linear.at(t),
    }
}

struct Blocks {
    rt: DMatrix<f64>,
    l: DMatrix<f64>,
    ell: DVector<f64>,
}

fn blocks(f: &Frozen<'_>, p: &DMatrix<f64>, phi: &DVector<f64>) -> Blocks {
    let c = &f.c;
    let mut rt = f.r.clone();
    let mut l = c.b.transpose() * p + f.s;
    let mut ell = c.b.transpose() * phi + f.rho.column(0);
    for i in 0..c.noise_dim {
        let dtp = c.d[i].transpose() * p;
        rt += &dtp * c.d[i];
        l += &dtp * c.c[i];
        ell += &dtp * c.sigma[i].column(0);
    }
    Blocks { rt, l, ell }
}

type State = (DMatrix<f64>, DVector<f64>, f64);

fn rhs(f: &Frozen<'_>, t: f64, st: &State) -> Result<State> {
    let (p, phi, _) = st;
    let c = &f.c;
    let b = blocks(f, p, phi);
    if min_eigenvalue(&b.rt) < 1e-12 {
        return Err(LcfError::RiccatiSingular {
            t,
            detail: format!("R + ΣDᵀPD has smallest eigenvalue {:.3e}", min_eigenvalue(&b.rt)),
        });
    }
    let chol = b.rt.clone().cholesky().ok_or_else(|| LcfError::RiccatiSingular {
        t,
        detail: "R + ΣDᵀPD is not positive definite".into(),
    })?;
    let rl = chol.solve(&b.l);
    let rell = chol.solve(&b.ell);
    let mut dp = p * c.a + c.a.transpose() * p + f.q - b.l.transpose() * &rl;
    let mut dphi = c.a.transpose() * phi + p * c.drift.column(0) + f.ql.column(0) - b.l.transpose() * &rell;
    let mut dc = phi.dot(&c.drift.column(0)) - 0.5 * b.ell.dot(&rell);
    for i in 0..c.noise_dim {
        let ctp = c.c[i].transpose() * p;
        dp += &ctp * c.c[i];
        dphi += &ctp * c.sigma[i].column(0);
        let ps = p * c.sigma[i].column(0);
        dc += 0.5 * ps.dot(&c.sigma[i].column(0));
    }
    Ok((-dp, -dphi, -dc))
}

fn axpy(st: &State, h: f64, k: &State) -> State {
    (&st.0 + &k.0 * h, &st.1 + &k.1 * h, st.2 + k.2 * h)
}

/// Integrates `(P, φ, c)` backward over `grid` with classical RK4 using
/// `substeps` sub-steps per interval (coefficients frozen at the left node).
pub fn solve_riccati_ode(spec: &ProblemSpec, grid: TimeGrid, substeps: usize) -> Result<RiccatiSolution> {
    if !spec.is_lq() {
        return Err(argument("the Riccati oracle needs a quadratic cost"));
    }
    if substeps == 0 {
        return Err(argument("need at least one RK4 sub-step"));
    }
    if (grid.t_end - spec.horizon).abs() > 1e-12 {
        return Err(argument("the oracle grid must end at the horizon"));
    }
    let q: &QuadraticCost = &spec.cost.quadratic;
    let steps = grid.steps;
    let mut p = vec![DMatrix::zeros(0, 0); steps + 1];
    let mut phi = vec![DVector::zeros(0); steps + 1];
    let mut c = vec![0.0; steps + 1];
    let mut st: State = (q.terminal_weight.clone(), q.terminal_linear.column(0).into_owned(), 0.0);
    p[steps] = st.0.clone();
    phi[steps] = st.1.clone();
    for k in (0..steps).rev() {
        let f = frozen(spec, grid.node(k));
        let h = -(grid.node(k + 1) - grid.node(k)) / substeps as f64;
        let mut t = grid.node(k + 1);
        for _ in 0..substeps {
            let k1 = rhs(&f, t, &st)?;
            let k2 = rhs(&f, t + 0.5 * h, &axpy(&st, 0.5 * h, &k1))?;
            let k3 = rhs(&f, t + 0.5 * h, &axpy(&st, 0.5 * h, &k2))?;
            let k4 = rhs(&f, t + h, &axpy(&st, h, &k3))?;
            st.0 += (&k1.0 + &k2.0 * 2.0 + &k3.0 * 2.0 + &k4.0) * (h / 6.0);
            st.1 += (&k1.1 + &k2.1 * 2.0 + &k3.1 * 2.0 + &k4.1) * (h / 6.0);
            st.2 += (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2) * (h / 6.0);
            st.0 = symmetrize(&st.0).0;
            t += h;
        }
        p[k] = st.0.clone();
        phi[k] = st.1.clone();
        c[k] = st.2;
    }

    let mut gain = Vec::with_capacity(steps + 1);
    let mut offset = Vec::with_capacity(steps + 1);
    let mut margin = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = grid.node(k);
        let b = blocks(&frozen(spec, t), &p[k], &phi[k]);
        let eig = min_eigenvalue(&b.rt);
        let chol = b.rt.cholesky().ok_or_else(|| LcfError::RiccatiSingular {
            t,
            detail: "R + ΣDᵀPD is not positive definite".into(),
        })?;
        gain.push(-chol.solve(&b.l));
        offset.push(-chol.solve(&b.ell));
        margin.push(eig);
    }
    Ok(RiccatiSolution { grid, p, phi, c, gain, offset, margin })
}

/// `V`, `DₓV` and `D²ₓₓV` from the oracle.
#[derive(Debug, Clone, Serialize)]
pub struct LqValue {
    pub v: f64,
    pub dv: Vec<f64>,
    /// Row-major.
    pub dvv: Vec<f64>,
}

impl RiccatiSolution {
    fn locate(&self, t: f64) -> (usize, f64) {
        let s = ((t - self.grid.t0) / self.grid.dt()).clamp(0.0, self.grid.steps as f64);
        let k = (s.floor() as usize).min(self.grid.steps.saturating_sub(1));
        let w = (s - k as f64).clamp(0.0, 1.0);
        // land exactly on a node when within rounding of it
        if w < 1e-9 {
            (k, 0.0)
        } else if w > 1.0 - 1e-9 {
            (k + 1, 0.0)
        } else {
            (k, w)
        }
    }

    fn lerp_mat(v: &[DMatrix<f64>], k: usize, w: f64) -> DMatrix<f64> {
        if w == 0.0 {
            v[k].clone()
        } else {
            &v[k] * (1.0 - w) + &v[k + 1] * w
        }
    }

    pub fn p_at(&self, t: f64) -> DMatrix<f64> {
        let (k, w) = self.locate(t);
        Self::lerp_mat(&self.p, k, w)
    }

    pub fn phi_at(&self, t: f64) -> DVector<f64> {
        let (k, w) = self.locate(t);
        if w == 0.0 {
            self.phi[k].clone()
        } else {
            &self.phi[k] * (1.0 - w) + &self.phi[k + 1] * w
        }
    }

    pub fn c_at(&self, t: f64) -> f64 {
        let (k, w) = self.locate(t);
        if w == 0.0 {
            self.c[k]
        } else {
            self.c[k] * (1.0 - w) + self.c[k + 1] * w
        }
    }

    pub fn gain_at(&self, t: f64) -> DMatrix<f64> {
        let (k, w) = self.locate(t);
        Self::lerp_mat(&self.gain, k, w)
    }

    pub fn offset_at(&self, t: f64) -> DVector<f64> {
        let (k, w) = self.locate(t);
        if w == 0.0 {
            self.offset[k].clone()
        } else {
            &self.offset[k] * (1.0 - w) + &self.offset[k + 1] * w
        }
    }

    pub fn min_margin(&self) -> f64 {
        self.margin.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// CSV rows `t, P…, phi…, c, Theta…` (matrices column-major).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let (n, m) = (self.p[0].nrows(), self.gain[0].nrows());
        let mut header = vec!["t".to_string()];
        header.extend((0..n * n).map(|i| format!("P_{}_{}", i % n, i / n)));
        header.extend((0..n).map(|i| format!("phi_{i}")));
        header.push("c".into());
        header.extend((0..m * n).map(|i| format!("Theta_{}_{}", i % m, i / m)));
        w.write_record(&header)?;
        for k in 0..=self.grid.steps {
            let mut rec = vec![self.grid.node(k).to_string()];
            rec.extend(self.p[k].iter().map(|v| v.to_string()));
            rec.extend(self.phi[k].iter().map(|v| v.to_string()));
            rec.push(self.c[k].to_string());
            rec.extend(self.gain[k].iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Quadratic value function from the oracle, interpolating linearly in `t`
/// between nodes.
pub fn lq_value(ric: &RiccatiSolution, t: f64, x: &[f64]) -> Result<LqValue> {
    let g = &ric.grid;
    if t < g.t0 - 1e-12 || t > g.t_end + 1e-12 {
        return Err(argument(format!("t = {t} lies outside [{}, {}]", g.t0, g.t_end)));
    }
    let p = ric.p_at(t);
    let phi = ric.phi_at(t);
    let xv = DVector::from_column_slice(x);
    let px = &p * &xv;
    Ok(LqValue {
        v: 0.5 * px.dot(&xv) + phi.dot(&xv) + ric.c_at(t),
        dv: (px + phi).as_slice().to_vec(),
        dvv: p.transpose().as_slice().to_vec(),
    })
}

/// Closed loop `u = Θ(t)X + θ(t)` simulated on `noise`.
pub fn lq_optimal_trajectory(
    spec: &ProblemSpec,
    ric: &RiccatiSolution,
    x0: &[f64],
    noise: &BrownianEnsemble,
) -> Result<(StateEnsemble, ControlEnsemble, CostEstimate)> {
    let gains: Vec<(DMatrix<f64>, DVector<f64>)> =
        (0..noise.grid.steps).map(|k| {
            let t = noise.grid.node(k);
            (ric.gain_at(t), ric.offset_at(t))
        }).collect();
    let (x, u) = simulate_feedback(spec, x0, noise, |_, k, _, x, out| {
        let (g, o) = &gains[k];
        out.copy_from_slice(o.as_slice());
        crate::linalg::mat_vec_acc(g, x, 1.0, out);
        Ok(())
    })?;
    let cost = crate::adjoint::cost_estimate(spec, &x, &u);
    Ok((x, u, cost))
}

/// Exact expected cost of the Euler-discretized affine feedback
/// `u = K(t)X + k₀(t)` from `(grid.t0, x0)`, computed from the first and
/// second moments of the state. Only defined for quadratic costs.
pub fn linear_feedback_cost(
    spec: &ProblemSpec,
    grid: TimeGrid,
    x0: &[f64],
    feedback: impl Fn(f64) -> (DMatrix<f64>, DVector<f64>),
) -> Result<f64> {
    if !spec.is_lq() {
        return Err(argument("exact feedback costs need a quadratic cost"));
    }
    let q = &spec.cost.quadratic;
    let dt = grid.dt();
    let mut mu = DVector::from_column_slice(x0);
    let mut second = &mu * mu.transpose();
    let mut total = 0.0;
    for k in 0..grid.steps {
        let t = grid.node(k);
        let f = frozen(spec, t);
        let (gk, k0) = feedback(t);
        let tr = |m: &DMatrix<f64>| (m * &second).trace();
        // running cost with u = K X + k0
        let run = 0.5 * tr(f.q)
            + tr(&(gk.transpose() * f.s))
            + k0.dot(&(f.s * &mu))
            + 0.5 * tr(&(gk.transpose() * f.r * &gk))
            + k0.dot(&(f.r * &gk * &mu))
            + 0.5 * k0.dot(&(f.r * &k0))
            + f.ql.column(0).dot(&mu)
            + f.rho.column(0).dot(&(&gk * &mu + &k0));
        total += run * dt;

        let c = &f.c;
        let n = mu.len();
        let fm = DMatrix::identity(n, n) + (c.a + c.b * &gk) * dt;
        let fv = (c.b * &k0 + c.drift.column(0)) * dt;
        let mut next_second = &fm * &second * fm.transpose()
            + &fm * &mu * fv.transpose()
            + &fv * mu.transpose() * fm.transpose()
            + &fv * fv.transpose();
        for i in 0..c.noise_dim {
            let gi = c.c[i] + c.d[i] * &gk;
            let vi = c.d[i] * &k0 + c.sigma[i].column(0);
            next_second += (&gi * &second * gi.transpose()
                + &gi * &mu * vi.transpose()
                + &vi * mu.transpose() * gi.transpose()
                + &vi * vi.transpose())
                * dt;
        }
        mu = &fm * &mu + fv;
        second = symmetrize(&next_second).0;
    }
    total += 0.5 * (&q.terminal_weight * &second).trace() + q.terminal_linear.column(0).dot(&mu);
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::generate_brownian;
    use crate::problem::presets;

    fn grid(steps: usize) -> TimeGrid {
        TimeGrid::new(0.0, 1.0, steps).unwrap()
    }

    #[test]
    fn p1_riccati_is_constant() {
        let ric = solve_riccati_ode(&presets::p1(0.3), grid(50), 4).unwrap();
        for k in 0..=50 {
            assert!((ric.p[k][(0, 0)] - 1.0).abs() < 1e-12);
            assert!(ric.phi[k][0].abs() < 1e-15);
            assert!((ric.c[k] - 0.045 * (1.0 - ric.grid.node(k))).abs() < 1e-12);
            assert!((ric.gain[k][(0, 0)] + 1.0).abs() < 1e-12);
        }
        let v = lq_value(&ric, 0.0, &[0.0]).unwrap();
        assert!((v.v - 0.045).abs() < 1e-12);
        assert_eq!(v.dv, vec![0.0]);
        assert!((v.dvv[0] - 1.0).abs() < 1e-12);
        let v = lq_value(&ric, 1.0, &[2.0]).unwrap();
        assert!((v.v - 2.0).abs() < 1e-12);
        assert!(lq_value(&ric, 1.5, &[0.0]).is_err());
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let ric = solve_riccati_ode(&presets::zero_problem(), grid(10), 4).unwrap();
        assert!(ric.p.iter().all(|p| p[(0, 0)] == 0.0));
        assert!(ric.c.iter().all(|c| *c == 0.0));
        assert_eq!(lq_value(&ric, 0.3, &[5.0]).unwrap().v, 0.0);
    }

    #[test]
    fn substep_refinement_is_negligible() {
        let spec = presets::coupled_lq_2d();
        let a = solve_riccati_ode(&spec, grid(50), 4).unwrap();
        let b = solve_riccati_ode(&spec, grid(50), 8).unwrap();
        assert!((&a.p[0] - &b.p[0]).amax() <= 1e-8);
        assert!(a.min_margin() >= 0.9 - 1e-8);
    }

    #[test]
    fn diffusion_control_raises_the_margin() {
        let ric = solve_riccati_ode(&presets::p1_with_diffusion_control(0.5, 0.3), grid(50), 4).unwrap();
        // R + D²P with P(0) a little above 1
        assert!(ric.margin[0] > 1.25 && ric.margin[0] < 1.25 * 1.05);
        assert!((ric.margin[50] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn linear_terminal_oracle() {
        let ric = solve_riccati_ode(&presets::linear_terminal(1.0), grid(20), 4).unwrap();
        let v = lq_value(&ric, 0.0, &[0.0]).unwrap();
        assert!((v.v + 0.5).abs() < 1e-12);
        assert!((v.dv[0] - 1.0).abs() < 1e-12);
        assert!((ric.offset[0][0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn trajectory_uses_the_gain() {
        let spec = presets::p1(0.3);
        let ric = solve_riccati_ode(&spec, grid(20), 4).unwrap();
        let w = generate_brownian(grid(20), 100, 1, 4, true).unwrap();
        let (x, u, _) = lq_optimal_trajectory(&spec, &ric, &[0.5], &w).unwrap();
        for p in 0..100 {
            for k in 0..20 {
                assert!((u.u(p, k)[0] + x.x(p, k)[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn moment_cost_matches_monte_carlo() {
        let spec = presets::coupled_lq_2d();
        let g = grid(20);
        let ric = solve_riccati_ode(&spec, g, 4).unwrap();
        let exact = linear_feedback_cost(&spec, g, &[0.3, -0.2], |t| (ric.gain_at(t), ric.offset_at(t))).unwrap();
        let w = generate_brownian(g, 40_000, 2, 9, true).unwrap();
        let (_, _, mc) = lq_optimal_trajectory(&spec, &ric, &[0.3, -0.2], &w).unwrap();
        assert!((mc.mean - exact).abs() < 4.0 * mc.stderr + 1e-12, "{} vs {exact}", mc.mean);
        // the optimal discrete cost is within O(Δt) of V
        let v = lq_value(&ric, 0.0, &[0.3, -0.2]).unwrap().v;
        assert!((exact - v).abs() < 0.05 * (1.0 + v.abs()));
    }
}

//! The closed cost catalog: a quadratic part plus ρ-smoothed convex sums,
//! where ρ(z) = √(1+z²) − 1.
//!
//! Every member has bounded, continuous second derivatives, so derivative
//! consistency and the Hessian bound can be audited by sampling.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::time::TimeVarying;
use crate::linalg::{mat_t_vec_acc, mat_vec_acc, sym_spectral_norm};

/// `⟨a x, y⟩` without allocating.
#[inline]
fn bilinear(a: &DMatrix<f64>, x: &[f64], y: &[f64]) -> f64 {
    let rows = a.nrows();
    let data = a.as_slice();
    x.iter()
        .enumerate()
        .map(|(j, &xj)| xj * crate::linalg::dot(&data[j * rows..(j + 1) * rows], y))
        .sum()
}

/// ρ(z) = √(1+z²) − 1.
#[inline]
pub fn rho(z: f64) -> f64 {
    // z²/(√(1+z²)+1) avoids cancellation near 0
    z * z / ((1.0 + z * z).sqrt() + 1.0)
}

#[inline]
pub fn rho_prime(z: f64) -> f64 {
    z / (1.0 + z * z).sqrt()
}

#[inline]
pub fn rho_second(z: f64) -> f64 {
    (1.0 + z * z).powf(-1.5)
}

/// Quadratic cost data:
/// `g(x) = ½⟨Gx,x⟩ + ⟨r,x⟩`,
/// `l(t,x,u) = ½⟨Qx,x⟩ + ⟨Sx,u⟩ + ½⟨Ru,u⟩ + ⟨q,x⟩ + ⟨ρ,u⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    /// G, n×n symmetric.
    pub terminal_weight: DMatrix<f64>,
    /// r, n-vector (stored as n×1).
    pub terminal_linear: DMatrix<f64>,
    /// Q(t), n×n symmetric.
    pub state_weight: TimeVarying<DMatrix<f64>>,
    /// S(t), m×n.
    pub cross_weight: TimeVarying<DMatrix<f64>>,
    /// R(t), m×m symmetric.
    pub control_weight: TimeVarying<DMatrix<f64>>,
    /// q(t), n×1.
    pub state_linear: TimeVarying<DMatrix<f64>>,
    /// ρ(t), m×1.
    pub control_linear: TimeVarying<DMatrix<f64>>,
}

impl QuadraticCost {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            terminal_weight: DMatrix::zeros(n, n),
            terminal_linear: DMatrix::zeros(n, 1),
            state_weight: TimeVarying::Constant(DMatrix::zeros(n, n)),
            cross_weight: TimeVarying::Constant(DMatrix::zeros(m, n)),
            control_weight: TimeVarying::Constant(DMatrix::zeros(m, m)),
            state_linear: TimeVarying::Constant(DMatrix::zeros(n, 1)),
            control_linear: TimeVarying::Constant(DMatrix::zeros(m, 1)),
        }
    }
}

/// Coefficients of the ρ-smoothed terms:
/// `κ_x Σρ(x_j) + κ_u Σρ(u_j)` in `l` and `κ_g Σρ(x_j)` in `g`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothTerms {
    #[serde(default)]
    pub kappa_x: f64,
    #[serde(default)]
    pub kappa_u: f64,
    #[serde(default)]
    pub kappa_g: f64,
}

impl SmoothTerms {
    pub fn is_zero(&self) -> bool {
        self.kappa_x == 0.0 && self.kappa_u == 0.0 && self.kappa_g == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostFamily {
    Quadratic,
    Case1Smooth,
    Case2Smooth,
}

/// Second-derivative blocks of the running cost at one point.
#[derive(Debug, Clone)]
pub struct RunningHessian {
    pub xx: DMatrix<f64>,
    pub xu: DMatrix<f64>,
    pub ux: DMatrix<f64>,
    pub uu: DMatrix<f64>,
}

impl RunningHessian {
    /// The stacked (x,u) Hessian `[[xx, xu], [ux, uu]]`.
    pub fn full(&self) -> DMatrix<f64> {
        let n = self.xx.nrows();
        let m = self.uu.nrows();
        let mut h = DMatrix::zeros(n + m, n + m);
        h.view_mut((0, 0), (n, n)).copy_from(&self.xx);
        h.view_mut((0, n), (n, m)).copy_from(&self.xu);
        h.view_mut((n, 0), (m, n)).copy_from(&self.ux);
        h.view_mut((n, n), (m, m)).copy_from(&self.uu);
        h
    }
}

/// A member of the cost catalog. `quadratic` already includes any δ-terms
/// contributed by the smooth families.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub family: CostFamily,
    pub quadratic: QuadraticCost,
    pub smooth: SmoothTerms,
    /// For the smooth families, the δ used by the builder (serialization).
    pub family_delta: Option<f64>,
}

impl CostModel {
    pub fn n(&self) -> usize {
        self.quadratic.terminal_weight.nrows()
    }

    pub fn m(&self) -> usize {
        self.quadratic.control_weight.first().nrows()
    }

    pub fn terminal_value(&self, x: &[f64]) -> f64 {
        let q = &self.quadratic;
        let mut v = 0.5 * bilinear(&q.terminal_weight, x, x) + crate::linalg::dot(q.terminal_linear.as_slice(), x);
        if self.smooth.kappa_g != 0.0 {
            v += self.smooth.kappa_g * x.iter().map(|&z| rho(z)).sum::<f64>();
        }
        v
    }

    /// `out = D_x g(x)`
    pub fn terminal_grad(&self, x: &[f64], out: &mut [f64]) {
        let q = &self.quadratic;
        out.copy_from_slice(q.terminal_linear.as_slice());
        mat_vec_acc(&q.terminal_weight, x, 1.0, out);
        if self.smooth.kappa_g != 0.0 {
            for (o, &z) in out.iter_mut().zip(x) {
                *o += self.smooth.kappa_g * rho_prime(z);
            }
        }
    }

    pub fn terminal_hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut h = self.quadratic.terminal_weight.clone();
        if self.smooth.kappa_g != 0.0 {
            for (j, &z) in x.iter().enumerate() {
                h[(j, j)] += self.smooth.kappa_g * rho_second(z);
            }
        }
        h
    }

    pub fn running_value(&self, t: f64, x: &[f64], u: &[f64]) -> f64 {
        let q = &self.quadratic;
        let mut v = 0.5 * bilinear(q.state_weight.at(t), x, x)
            + bilinear(q.cross_weight.at(t), x, u)
            + 0.5 * bilinear(q.control_weight.at(t), u, u)
            + crate::linalg::dot(q.state_linear.at(t).as_slice(), x)
            + crate::linalg::dot(q.control_linear.at(t).as_slice(), u);
        let s = &self.smooth;
        if s.kappa_x != 0.0 {
            v += s.kappa_x * x.iter().map(|&z| rho(z)).sum::<f64>();
        }
        if s.kappa_u != 0.0 {
            v += s.kappa_u * u.iter().map(|&z| rho(z)).sum::<f64>();
        }
        v
    }

    /// `out = D_x l(t,x,u) = Qx + Sᵀu + q + κ_x ρ'(x)`
    pub fn running_grad_x(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        let q = &self.quadratic;
        out.copy_from_slice(q.state_linear.at(t).as_slice());
        mat_vec_acc(q.state_weight.at(t), x, 1.0, out);
        mat_t_vec_acc(q.cross_weight.at(t), u, 1.0, out);
        if self.smooth.kappa_x != 0.0 {
            for (o, &z) in out.iter_mut().zip(x) {
                *o += self.smooth.kappa_x * rho_prime(z);
            }
        }
    }

    /// `out = D_u l(t,x,u) = Sx + Ru + ρ + κ_u ρ'(u)`
    pub fn running_grad_u(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        let q = &self.quadratic;
        out.copy_from_slice(q.control_linear.at(t).as_slice());
        mat_vec_acc(q.cross_weight.at(t), x, 1.0, out);
        mat_vec_acc(q.control_weight.at(t), u, 1.0, out);
        if self.smooth.kappa_u != 0.0 {
            for (o, &z) in out.iter_mut().zip(u) {
                *o += self.smooth.kappa_u * rho_prime(z);
            }
        }
    }

    pub fn running_hessian(&self, t: f64, x: &[f64], u: &[f64]) -> RunningHessian {
        let q = &self.quadratic;
        let mut xx = q.state_weight.at(t).clone();
        let mut uu = q.control_weight.at(t).clone();
        let ux = q.cross_weight.at(t).clone();
        let xu = ux.transpose();
        if self.smooth.kappa_x != 0.0 {
            for (j, &z) in x.iter().enumerate() {
                xx[(j, j)] += self.smooth.kappa_x * rho_second(z);
            }
        }
        if self.smooth.kappa_u != 0.0 {
            for (j, &z) in u.iter().enumerate() {
                uu[(j, j)] += self.smooth.kappa_u * rho_second(z);
            }
        }
        RunningHessian { xx, xu, ux, uu }
    }

    /// `D_uu l(t,x,u)` only; cheaper than [`Self::running_hessian`].
    pub fn running_hessian_uu(&self, t: f64, u: &[f64]) -> DMatrix<f64> {
        let mut uu = self.quadratic.control_weight.at(t).clone();
        if self.smooth.kappa_u != 0.0 {
            for (j, &z) in u.iter().enumerate() {
                uu[(j, j)] += self.smooth.kappa_u * rho_second(z);
            }
        }
        uu
    }

    /// Analytic bound on every second-derivative block: the spectral norm of
    /// the quadratic part plus the largest κ (since 0 < ρ'' ≤ 1).
    pub fn hessian_bound(&self) -> f64 {
        let q = &self.quadratic;
        let n = self.n();
        let m = self.m();
        let mut run = 0.0f64;
        let mut blocks = |qm: &DMatrix<f64>, s: &DMatrix<f64>, r: &DMatrix<f64>| {
            let mut h = DMatrix::zeros(n + m, n + m);
            h.view_mut((0, 0), (n, n)).copy_from(qm);
            h.view_mut((0, n), (n, m)).copy_from(&s.transpose());
            h.view_mut((n, 0), (m, n)).copy_from(s);
            h.view_mut((n, n), (m, m)).copy_from(r);
            run = run.max(sym_spectral_norm(&h));
        };
        for qm in q.state_weight.values() {
            for s in q.cross_weight.values() {
                for r in q.control_weight.values() {
                    blocks(qm, s, r);
                }
            }
        }
        let run = run + self.smooth.kappa_x.max(self.smooth.kappa_u);
        let term = sym_spectral_norm(&q.terminal_weight) + self.smooth.kappa_g;
        run.max(term)
    }

    pub fn is_quadratic(&self) -> bool {
        self.smooth.is_zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_derivatives() {
        assert_eq!(rho(0.0), 0.0);
        assert_eq!(rho_second(0.0), 1.0);
        let z: f64 = 0.7;
        assert!((rho(z) - ((1.0 + z * z).sqrt() - 1.0)).abs() < 1e-15);
        let h = 1e-5;
        let fd = (rho(z + h) - rho(z - h)) / (2.0 * h);
        assert!((fd - rho_prime(z)).abs() < 1e-9);
        let fd2 = (rho_prime(z + h) - rho_prime(z - h)) / (2.0 * h);
        assert!((fd2 - rho_second(z)).abs() < 1e-9);
        // sup of ρ'' is attained at 0
        for k in 1..100 {
            assert!(rho_second(k as f64 * 0.05) < 1.0);
        }
    }
}

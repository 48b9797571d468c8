//! Sampling audit of the standing assumptions: derivative consistency,
//! bounded Hessians, and the convexity mode declared by the certificate.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{CertificateMode, ProblemSpec};
use crate::error::{argument, LcfError, Result};
use crate::linalg::{min_eigenvalue, sym_spectral_norm};

const AUDIT_SEED: u64 = 0x5eed_a0d1;
const GRAD_TOL: f64 = 1e-5;
const HESS_TOL: f64 = 1e-5;
const EIG_TOL: f64 = 1e-10;

/// Half-widths of the audit box for states and controls.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SampleBox {
    pub x_half_width: f64,
    pub u_half_width: f64,
}

impl Default for SampleBox {
    fn default() -> Self {
        Self { x_half_width: 5.0, u_half_width: 5.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed margin; negative means violated.
    pub worst_margin: f64,
    /// `(t, x…, u…)` where the worst margin was observed.
    pub worst_point: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub label: String,
    pub samples: usize,
    pub hessian_bound: f64,
    pub max_observed_hessian: f64,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Turns a failed report into a validation error naming the first
    /// failing check and its offending sample.
    pub fn into_result(self) -> Result<Self> {
        if let Some(bad) = self.checks.iter().find(|c| !c.passed) {
            return Err(LcfError::Validation(format!(
                "{} failed with margin {:.6e} at (t, x, u) = {:?}",
                bad.name, bad.worst_margin, bad.worst_point
            )));
        }
        Ok(self)
    }
}

struct Tracker {
    name: &'static str,
    worst: f64,
    point: Option<Vec<f64>>,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self { name, worst: f64::INFINITY, point: None }
    }

    fn record(&mut self, margin: f64, point: &[f64]) {
        if margin < self.worst || self.point.is_none() {
            self.worst = margin;
            self.point = Some(point.to_vec());
        }
    }

    fn finish(self, threshold: f64) -> CheckResult {
        CheckResult {
            name: self.name.to_string(),
            passed: self.worst >= threshold,
            worst_margin: self.worst,
            worst_point: self.point,
        }
    }
}

fn fd_step(z: f64, base: f64) -> f64 {
    base * (1.0 + z.abs())
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Audits `spec` at `samples` seeded random points of `[0,T] × box`.
///
/// Always returns a report when the problem is structurally sound; use
/// [`ValidationReport::into_result`] to turn a failed audit into an error.
pub fn validate_problem(spec: &ProblemSpec, sample_box: SampleBox, samples: usize) -> Result<ValidationReport> {
    if samples == 0 {
        return Err(argument("validation needs at least one sample"));
    }
    spec.check()?;
    let n = spec.dims.n;
    let m = spec.dims.m;
    let cost = &spec.cost;
    let delta = spec.certificate.delta;
    let k_hess = spec.hessian_bound();
    let mut rng = ChaCha8Rng::seed_from_u64(AUDIT_SEED);

    let mut grad_g = Tracker::new("terminal_gradient_matches_fd");
    let mut grad_l = Tracker::new("running_gradient_matches_fd");
    let mut hess_g = Tracker::new("terminal_hessian_matches_fd");
    let mut hess_l = Tracker::new("running_hessian_matches_fd");
    let mut cross = Tracker::new("cross_hessian_transpose");
    let mut bound = Tracker::new("hessian_bound");
    let mut mode_checks: Vec<Tracker> = match spec.certificate.mode {
        CertificateMode::Case1 => vec![
            Tracker::new("case1_duu_minus_delta_psd"),
            Tracker::new("case1_shifted_running_hessian_psd"),
            Tracker::new("case1_terminal_hessian_psd"),
        ],
        CertificateMode::Case2 => vec![
            Tracker::new("case2_terminal_hessian_minus_delta_psd"),
            Tracker::new("case2_running_hessian_psd"),
        ],
        CertificateMode::Declared => vec![],
    };
    let mut max_hess = 0.0f64;

    let mut grad_x = vec![0.0; n];
    let mut grad_u = vec![0.0; m];
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    let mut gpu = vec![0.0; m];
    let mut gmu = vec![0.0; m];

    for _ in 0..samples {
        let t = rng.random::<f64>() * spec.horizon;
        let x: Vec<f64> = (0..n)
            .map(|_| (2.0 * rng.random::<f64>() - 1.0) * sample_box.x_half_width)
            .collect();
        let u: Vec<f64> = (0..m)
            .map(|_| (2.0 * rng.random::<f64>() - 1.0) * sample_box.u_half_width)
            .collect();
        let mut point = vec![t];
        point.extend(&x);
        point.extend(&u);

        // first derivatives against central differences of values
        cost.terminal_grad(&x, &mut grad_x);
        let mut worst = 0.0f64;
        for j in 0..n {
            let h = fd_step(x[j], 1e-5);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (cost.terminal_value(&xp) - cost.terminal_value(&xm)) / (2.0 * h);
            worst = worst.max(rel_err(fd, grad_x[j]));
        }
        grad_g.record(GRAD_TOL - worst, &point);

        cost.running_grad_x(t, &x, &u, &mut grad_x);
        cost.running_grad_u(t, &x, &u, &mut grad_u);
        let mut worst = 0.0f64;
        for j in 0..n {
            let h = fd_step(x[j], 1e-5);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (cost.running_value(t, &xp, &u) - cost.running_value(t, &xm, &u)) / (2.0 * h);
            worst = worst.max(rel_err(fd, grad_x[j]));
        }
        for j in 0..m {
            let h = fd_step(u[j], 1e-5);
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += h;
            um[j] -= h;
            let fd = (cost.running_value(t, &x, &up) - cost.running_value(t, &x, &um)) / (2.0 * h);
            worst = worst.max(rel_err(fd, grad_u[j]));
        }
        grad_l.record(GRAD_TOL - worst, &point);

        // second derivatives against central differences of gradients
        let hg = cost.terminal_hessian(&x);
        let mut worst = 0.0f64;
        for j in 0..n {
            let h = fd_step(x[j], 1e-4);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            cost.terminal_grad(&xp, &mut gp);
            cost.terminal_grad(&xm, &mut gm);
            for i in 0..n {
                worst = worst.max(rel_err((gp[i] - gm[i]) / (2.0 * h), hg[(i, j)]));
            }
        }
        hess_g.record(HESS_TOL - worst, &point);

        let hl = cost.running_hessian(t, &x, &u);
        let mut worst = 0.0f64;
        for j in 0..n {
            let h = fd_step(x[j], 1e-4);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            cost.running_grad_x(t, &xp, &u, &mut gp);
            cost.running_grad_x(t, &xm, &u, &mut gm);
            for i in 0..n {
                worst = worst.max(rel_err((gp[i] - gm[i]) / (2.0 * h), hl.xx[(i, j)]));
            }
            cost.running_grad_u(t, &xp, &u, &mut gpu);
            cost.running_grad_u(t, &xm, &u, &mut gmu);
            for i in 0..m {
                worst = worst.max(rel_err((gpu[i] - gmu[i]) / (2.0 * h), hl.ux[(i, j)]));
            }
        }
        for j in 0..m {
            let h = fd_step(u[j], 1e-4);
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += h;
            um[j] -= h;
            cost.running_grad_u(t, &x, &up, &mut gpu);
            cost.running_grad_u(t, &x, &um, &mut gmu);
            for i in 0..m {
                worst = worst.max(rel_err((gpu[i] - gmu[i]) / (2.0 * h), hl.uu[(i, j)]));
            }
            cost.running_grad_x(t, &x, &up, &mut gp);
            cost.running_grad_x(t, &x, &um, &mut gm);
            for i in 0..n {
                worst = worst.max(rel_err((gp[i] - gm[i]) / (2.0 * h), hl.xu[(i, j)]));
            }
        }
        hess_l.record(HESS_TOL - worst, &point);

        let transpose_defect = (&hl.ux - hl.xu.transpose()).amax();
        cross.record(-transpose_defect, &point);

        let full = hl.full();
        let observed = sym_spectral_norm(&full).max(sym_spectral_norm(&hg));
        max_hess = max_hess.max(observed);
        bound.record(k_hess * (1.0 + 1e-9) - observed, &point);

        match spec.certificate.mode {
            CertificateMode::Case1 => {
                let shifted_uu = &hl.uu - DMatrix::<f64>::identity(m, m) * delta;
                mode_checks[0].record(min_eigenvalue(&shifted_uu), &point);
                let mut shifted = full.clone();
                for j in 0..m {
                    shifted[(n + j, n + j)] -= delta;
                }
                mode_checks[1].record(min_eigenvalue(&shifted), &point);
                mode_checks[2].record(min_eigenvalue(&hg), &point);
            }
            CertificateMode::Case2 => {
                let shifted_g = &hg - DMatrix::<f64>::identity(n, n) * delta;
                mode_checks[0].record(min_eigenvalue(&shifted_g), &point);
                mode_checks[1].record(min_eigenvalue(&full), &point);
            }
            CertificateMode::Declared => {}
        }
    }

    let mut checks = vec![
        grad_g.finish(0.0),
        grad_l.finish(0.0),
        hess_g.finish(0.0),
        hess_l.finish(0.0),
        cross.finish(-1e-12),
        bound.finish(0.0),
    ];
    for c in mode_checks {
        checks.push(c.finish(-EIG_TOL));
    }
    if spec.certificate.mode == CertificateMode::Case2 {
        let mut dtd = Tracker::new("case2_dtd_minus_delta_psd");
        let mut times = spec.coeffs.breakpoints();
        times.push(spec.horizon);
        for t in times {
            let eig = min_eigenvalue(&spec.coeffs.dtd(t)) - delta;
            dtd.record(eig, &[t]);
        }
        checks.push(dtd.finish(-EIG_TOL));
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(ValidationReport {
        label: spec.label.clone(),
        samples,
        hessian_bound: k_hess,
        max_observed_hessian: max_hess,
        checks,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::presets;
    use crate::problem::TimeVarying;

    #[test]
    fn p1_passes() {
        let report = validate_problem(&presets::p1(0.3), SampleBox::default(), 200).unwrap();
        assert!(report.passed, "{report:#?}");
        assert_eq!(report.check("case1_duu_minus_delta_psd").unwrap().worst_margin, 0.0);
    }

    #[test]
    fn weak_control_penalty_fails_with_margin() {
        let mut spec = presets::p1(0.3);
        spec.cost.quadratic.control_weight = TimeVarying::Constant(DMatrix::from_element(1, 1, 0.5));
        let report = validate_problem(&spec, SampleBox::default(), 50).unwrap();
        assert!(!report.passed);
        let c = report.check("case1_duu_minus_delta_psd").unwrap();
        assert!((c.worst_margin + 0.5).abs() < 1e-12);
        assert!(c.worst_point.is_some());
        let err = report.into_result().unwrap_err();
        assert!(matches!(err, LcfError::Validation(_)));
    }

    #[test]
    fn p2_passes_with_bounded_hessian() {
        let report = validate_problem(&presets::p2(), SampleBox::default(), 1000).unwrap();
        assert!(report.passed, "{report:#?}");
        assert!((report.hessian_bound - 1.5).abs() < 1e-12);
        assert!(report.max_observed_hessian <= 1.5);
    }

    #[test]
    fn dense_sampling_of_rho_curvature_peaks_at_zero() {
        // max of ρ'' over a fine grid of [-5, 5] is 1, attained at z = 0
        let max = (0..=10_000)
            .map(|i| -5.0 + i as f64 * 1e-3)
            .map(crate::problem::rho_second)
            .fold(0.0f64, f64::max);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn zero_samples_is_an_argument_error() {
        assert!(validate_problem(&presets::p1(0.3), SampleBox::default(), 0).is_err());
    }
}

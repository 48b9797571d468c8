//! Problem definition: linear controlled dynamics, a convex cost from the
//! closed catalog, and a declared convexity certificate.

mod cost;
pub mod json;
pub mod presets;
mod time;
mod validate;

pub use cost::{rho, rho_prime, rho_second, CostFamily, CostModel, QuadraticCost, RunningHessian, SmoothTerms};
pub use json::ProblemDocument;
pub use time::TimeVarying;
pub use validate::{validate_problem, CheckResult, SampleBox, ValidationReport};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{argument, structural, LcfError, Result};
use crate::linalg::{min_eigenvalue, symmetrize};

/// State, control and Brownian dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimensions {
    pub n: usize,
    pub m: usize,
    pub d: usize,
}

impl Dimensions {
    pub fn new(n: usize, m: usize, d: usize) -> Result<Self> {
        if n == 0 || m == 0 || d == 0 {
            return Err(structural(format!("dimensions must be positive, got n={n}, m={m}, d={d}")));
        }
        Ok(Self { n, m, d })
    }
}

/// Coefficients of `dX = (AX + Bu + b)dt + Σᵢ (CᵢX + Dᵢu + σᵢ) dWⁱ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub a: TimeVarying<DMatrix<f64>>,
    pub b: TimeVarying<DMatrix<f64>>,
    pub c: Vec<TimeVarying<DMatrix<f64>>>,
    pub d: Vec<TimeVarying<DMatrix<f64>>>,
    /// The drift offset `b(t)`, stored n×1.
    pub drift: TimeVarying<DMatrix<f64>>,
    /// `σᵢ(t)`, each n×1.
    pub sigma: Vec<TimeVarying<DMatrix<f64>>>,
}

/// Coefficients frozen at one time.
#[derive(Debug, Clone, Copy)]
pub struct CoeffSnapshot<'a> {
    pub a: &'a DMatrix<f64>,
    pub b: &'a DMatrix<f64>,
    pub drift: &'a DMatrix<f64>,
    pub c: [&'a DMatrix<f64>; MAX_NOISE],
    pub d: [&'a DMatrix<f64>; MAX_NOISE],
    pub sigma: [&'a DMatrix<f64>; MAX_NOISE],
    pub noise_dim: usize,
}

/// Upper bound on the Brownian dimension (keeps snapshots on the stack).
pub const MAX_NOISE: usize = 16;

impl CoefficientSet {
    /// Time-invariant coefficients.
    pub fn constant(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: Vec<DMatrix<f64>>,
        d: Vec<DMatrix<f64>>,
        drift: DMatrix<f64>,
        sigma: Vec<DMatrix<f64>>,
    ) -> Self {
        Self {
            a: TimeVarying::Constant(a),
            b: TimeVarying::Constant(b),
            c: c.into_iter().map(TimeVarying::Constant).collect(),
            d: d.into_iter().map(TimeVarying::Constant).collect(),
            drift: TimeVarying::Constant(drift),
            sigma: sigma.into_iter().map(TimeVarying::Constant).collect(),
        }
    }

    /// All-zero dynamics (`dX = 0`).
    pub fn zeros(dims: Dimensions) -> Self {
        let Dimensions { n, m, d } = dims;
        Self::constant(
            DMatrix::zeros(n, n),
            DMatrix::zeros(n, m),
            vec![DMatrix::zeros(n, n); d],
            vec![DMatrix::zeros(n, m); d],
            DMatrix::zeros(n, 1),
            vec![DMatrix::zeros(n, 1); d],
        )
    }

    pub fn at(&self, t: f64) -> CoeffSnapshot<'_> {
        let nd = self.c.len();
        let c0 = self.c[0].at(t);
        let d0 = self.d[0].at(t);
        let s0 = self.sigma[0].at(t);
        let mut c = [c0; MAX_NOISE];
        let mut d = [d0; MAX_NOISE];
        let mut sigma = [s0; MAX_NOISE];
        for i in 1..nd {
            c[i] = self.c[i].at(t);
            d[i] = self.d[i].at(t);
            sigma[i] = self.sigma[i].at(t);
        }
        CoeffSnapshot {
            a: self.a.at(t),
            b: self.b.at(t),
            drift: self.drift.at(t),
            c,
            d,
            sigma,
            noise_dim: nd,
        }
    }

    pub fn check_shapes(&self, dims: Dimensions) -> Result<()> {
        let Dimensions { n, m, d } = dims;
        if d > MAX_NOISE {
            return Err(structural(format!("Brownian dimension {d} exceeds the supported maximum {MAX_NOISE}")));
        }
        let mut bad = Vec::new();
        if !self.a.shape_ok(n, n) {
            bad.push("A must be n×n");
        }
        if !self.b.shape_ok(n, m) {
            bad.push("B must be n×m");
        }
        if !self.drift.shape_ok(n, 1) {
            bad.push("b must have length n");
        }
        if self.c.len() != d || self.d.len() != d || self.sigma.len() != d {
            bad.push("C, D and sigma must each have d entries");
        } else {
            if !self.c.iter().all(|c| c.shape_ok(n, n)) {
                bad.push("each C_i must be n×n");
            }
            if !self.d.iter().all(|x| x.shape_ok(n, m)) {
                bad.push("each D_i must be n×m");
            }
            if !self.sigma.iter().all(|s| s.shape_ok(n, 1)) {
                bad.push("each sigma_i must have length n");
            }
        }
        if !bad.is_empty() {
            return Err(structural(bad.join("; ")));
        }
        let finite = self.a.all_finite()
            && self.b.all_finite()
            && self.drift.all_finite()
            && self.c.iter().all(|x| x.all_finite())
            && self.d.iter().all(|x| x.all_finite())
            && self.sigma.iter().all(|x| x.all_finite());
        if !finite {
            return Err(structural("coefficients contain non-finite entries"));
        }
        Ok(())
    }

    /// `Σᵢ DᵢᵀDᵢ` at time `t`.
    pub fn dtd(&self, t: f64) -> DMatrix<f64> {
        let m = self.b.first().ncols();
        let mut acc = DMatrix::zeros(m, m);
        for d in &self.d {
            let di = d.at(t);
            acc += di.transpose() * di;
        }
        acc
    }

    /// Whether any `Cᵢ` or `Dᵢ` is nonzero, i.e. whether the adjoint's `Z`
    /// feeds back into `Y` and the gradient.
    pub fn noise_coupled(&self) -> bool {
        let nonzero = |tv: &TimeVarying<DMatrix<f64>>| tv.values().iter().any(|m| m.iter().any(|v| *v != 0.0));
        self.c.iter().any(nonzero) || self.d.iter().any(nonzero)
    }

    /// Every time at which some coefficient may change, plus 0.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut ts = vec![0.0];
        ts.extend(self.a.breakpoints());
        ts.extend(self.b.breakpoints());
        ts.extend(self.drift.breakpoints());
        for x in self.c.iter().chain(&self.d).chain(&self.sigma) {
            ts.extend(x.breakpoints());
        }
        ts.sort_by(|a, b| a.total_cmp(b));
        ts.dedup();
        ts
    }

    /// Copy with `b ≡ 0` and `σ ≡ 0`.
    pub fn homogeneous(&self) -> Self {
        let mut out = self.clone();
        out.drift = out.drift.map(|v| DMatrix::zeros(v.nrows(), 1));
        for s in &mut out.sigma {
            *s = s.map(|v| DMatrix::zeros(v.nrows(), 1));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMode {
    Case1,
    Case2,
    Declared,
}

/// Declared uniform-convexity data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityCertificate {
    /// Uniform convexity modulus of `u ↦ J`.
    pub delta: f64,
    pub mode: CertificateMode,
    /// Lipschitz bound for the gradient map; `None` means estimate it.
    pub k_lip: Option<f64>,
}

impl ConvexityCertificate {
    pub fn new(delta: f64, mode: CertificateMode) -> Self {
        Self { delta, mode, k_lip: None }
    }
}

/// A fully specified linear-convex control problem on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub dims: Dimensions,
    pub horizon: f64,
    pub coeffs: CoefficientSet,
    pub cost: CostModel,
    pub certificate: ConvexityCertificate,
    pub label: String,
}

impl ProblemSpec {
    /// Checks shapes, finiteness and the scalar invariants.
    pub fn check(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(structural(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.certificate.delta > 0.0) {
            return Err(structural(format!("delta must be positive, got {}", self.certificate.delta)));
        }
        if let Some(k) = self.certificate.k_lip {
            if !(k > 0.0) {
                return Err(structural(format!("k_lip must be positive, got {k}")));
            }
        }
        self.coeffs.check_shapes(self.dims)?;
        check_quadratic_shapes(&self.cost.quadratic, self.dims)?;
        Ok(())
    }

    pub fn is_lq(&self) -> bool {
        self.cost.is_quadratic()
    }

    /// Bound on all cost second derivatives.
    pub fn hessian_bound(&self) -> f64 {
        self.cost.hessian_bound()
    }
}

fn check_quadratic_shapes(q: &QuadraticCost, dims: Dimensions) -> Result<()> {
    let Dimensions { n, m, .. } = dims;
    let ok = q.terminal_weight.shape() == (n, n)
        && q.terminal_linear.shape() == (n, 1)
        && q.state_weight.shape_ok(n, n)
        && q.cross_weight.shape_ok(m, n)
        && q.control_weight.shape_ok(m, m)
        && q.state_linear.shape_ok(n, 1)
        && q.control_linear.shape_ok(m, 1);
    if !ok {
        return Err(structural("cost matrices do not conform to (n, m)"));
    }
    let finite = crate::linalg::all_finite(&q.terminal_weight)
        && crate::linalg::all_finite(&q.terminal_linear)
        && q.state_weight.all_finite()
        && q.cross_weight.all_finite()
        && q.control_weight.all_finite()
        && q.state_linear.all_finite()
        && q.control_linear.all_finite();
    if !finite {
        return Err(structural("cost data contain non-finite entries"));
    }
    Ok(())
}

/// Relative asymmetry above which input is rejected instead of repaired.
const ASYMMETRY_REJECT: f64 = 1e-8;
const ASYMMETRY_WARN: f64 = 1e-12;

fn symmetrized(name: &str, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(structural(format!("{name} must be square, got {}×{}", m.nrows(), m.ncols())));
    }
    let (s, defect) = symmetrize(m);
    if defect > ASYMMETRY_REJECT {
        return Err(structural(format!("{name} is not symmetric (relative defect {defect:.3e})")));
    }
    if defect > ASYMMETRY_WARN {
        log::warn!("{name}: symmetrizing input with relative asymmetry {defect:.3e}");
    }
    Ok(s)
}

/// Data of the quadratic (LQ) cost together with the dynamics.
#[derive(Debug, Clone)]
pub struct LQData {
    pub dims: Dimensions,
    pub horizon: f64,
    pub coeffs: CoefficientSet,
    pub cost: QuadraticCost,
    pub delta: f64,
    pub mode: CertificateMode,
    pub label: String,
}

/// Builds an LQ problem; `G`, `Q`, `R` are symmetrized.
pub fn build_lq_problem(lq: LQData) -> Result<ProblemSpec> {
    let mut cost = lq.cost;
    cost.terminal_weight = symmetrized("G", &cost.terminal_weight)?;
    cost.state_weight = cost.state_weight.try_map(|q| symmetrized("Q", q))?;
    cost.control_weight = cost.control_weight.try_map(|r| symmetrized("R", r))?;
    let spec = ProblemSpec {
        dims: lq.dims,
        horizon: lq.horizon,
        coeffs: lq.coeffs,
        cost: CostModel {
            family: CostFamily::Quadratic,
            quadratic: cost,
            smooth: SmoothTerms::default(),
            family_delta: None,
        },
        certificate: ConvexityCertificate::new(lq.delta, lq.mode),
        label: lq.label,
    };
    spec.check()?;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothFamily {
    /// `l − (δ/2)|u|²` and `g` convex in `(x,u)`.
    Case1,
    /// `g − (δ/2)|x|²` and `l` convex, `DᵀD ≥ δI`.
    Case2,
}

/// Parameters of the smooth convex families. `extra` holds additional
/// quadratic terms (cross terms, extra weights) added on top of the
/// family's δ-term.
#[derive(Debug, Clone)]
pub struct SmoothFamilyParams {
    pub family: SmoothFamily,
    pub dims: Dimensions,
    pub horizon: f64,
    pub coeffs: CoefficientSet,
    pub delta: f64,
    pub smooth: SmoothTerms,
    pub extra: QuadraticCost,
    pub label: String,
}

/// Builds a member of the smooth convex families and checks that the
/// family's defining condition holds where it can be decided exactly.
pub fn build_smooth_convex_problem(params: SmoothFamilyParams) -> Result<ProblemSpec> {
    let SmoothFamilyParams { family, dims, horizon, coeffs, delta, smooth, extra, label } = params;
    if !(delta > 0.0) {
        return Err(argument(format!("delta must be positive, got {delta}")));
    }
    if smooth.kappa_x < 0.0 || smooth.kappa_u < 0.0 || smooth.kappa_g < 0.0 {
        return Err(argument("smoothing weights must be nonnegative"));
    }
    let mut quadratic = extra.clone();
    quadratic.terminal_weight = symmetrized("G", &quadratic.terminal_weight)?;
    quadratic.state_weight = quadratic.state_weight.try_map(|q| symmetrized("Q", q))?;
    quadratic.control_weight = quadratic.control_weight.try_map(|r| symmetrized("R", r))?;
    let (family_tag, mode) = match family {
        SmoothFamily::Case1 => {
            let eye = DMatrix::<f64>::identity(dims.m, dims.m) * delta;
            quadratic.control_weight = quadratic.control_weight.map(|r| r + &eye);
            (CostFamily::Case1Smooth, CertificateMode::Case1)
        }
        SmoothFamily::Case2 => {
            quadratic.terminal_weight += DMatrix::<f64>::identity(dims.n, dims.n) * delta;
            (CostFamily::Case2Smooth, CertificateMode::Case2)
        }
    };
    let spec = ProblemSpec {
        dims,
        horizon,
        coeffs,
        cost: CostModel {
            family: family_tag,
            quadratic,
            smooth,
            family_delta: Some(delta),
        },
        certificate: ConvexityCertificate::new(delta, mode),
        label,
    };
    spec.check()?;
    if family == SmoothFamily::Case2 {
        for t in spec.coeffs.breakpoints() {
            let eig = min_eigenvalue(&spec.coeffs.dtd(t));
            if eig < delta {
                return Err(LcfError::Validation(format!(
                    "case2 family requires DᵀD ≥ δI; at t = {t} the smallest eigenvalue is {eig:.6} < δ = {delta}"
                )));
            }
        }
    }
    Ok(spec)
}

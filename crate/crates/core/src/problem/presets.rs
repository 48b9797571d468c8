//! Built-in scalar problems used by the examples, the CLI and the tests.

use nalgebra::DMatrix;

use super::{
    build_lq_problem, build_smooth_convex_problem, CertificateMode, CoefficientSet, Dimensions, LQData,
    ProblemSpec, QuadraticCost, SmoothFamily, SmoothFamilyParams, SmoothTerms, TimeVarying,
};

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// Scalar dynamics `dX = (aX + bu + drift)dt + (cX + du + σ)dW`.
pub fn scalar_coeffs(a: f64, b: f64, c: f64, d: f64, drift: f64, sigma: f64) -> CoefficientSet {
    CoefficientSet::constant(
        scalar(a),
        scalar(b),
        vec![scalar(c)],
        vec![scalar(d)],
        scalar(drift),
        vec![scalar(sigma)],
    )
}

/// Scalar quadratic cost `g = ½G x² + r x`, `l = ½Q x² + S x u + ½R u² + q x + ρ u`.
#[allow(clippy::too_many_arguments)]
pub fn scalar_quadratic(g: f64, r: f64, q: f64, s: f64, rr: f64, ql: f64, rho: f64) -> QuadraticCost {
    QuadraticCost {
        terminal_weight: scalar(g),
        terminal_linear: scalar(r),
        state_weight: TimeVarying::Constant(scalar(q)),
        cross_weight: TimeVarying::Constant(scalar(s)),
        control_weight: TimeVarying::Constant(scalar(rr)),
        state_linear: TimeVarying::Constant(scalar(ql)),
        control_linear: TimeVarying::Constant(scalar(rho)),
    }
}

fn dims1() -> Dimensions {
    Dimensions { n: 1, m: 1, d: 1 }
}

/// P1: `n=m=d=1`, `A=0, B=1, C=D=0`, `Q=R=G=1`, `S=0`, noise level `sigma`,
/// horizon 1, `δ = 1` (case 1). The Riccati solution is `P ≡ 1`.
pub fn p1(sigma: f64) -> ProblemSpec {
    p1_with_diffusion_control(0.0, sigma)
}

/// P1 with control entering the diffusion through `D = d`.
pub fn p1_with_diffusion_control(d: f64, sigma: f64) -> ProblemSpec {
    build_lq_problem(LQData {
        dims: dims1(),
        horizon: 1.0,
        coeffs: scalar_coeffs(0.0, 1.0, 0.0, d, 0.0, sigma),
        cost: scalar_quadratic(1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0),
        delta: 1.0,
        mode: CertificateMode::Case1,
        label: if d == 0.0 { "P1".into() } else { format!("P1-D{d}") },
    })
    .expect("P1 preset is well formed")
}

/// P2: P1 dynamics with `l = ½u² + κ ρ(x)`, `g = ρ(x)`, `κ = 0.5`, `δ = 1`.
pub fn p2() -> ProblemSpec {
    p2_with(0.5, 0.3)
}

pub fn p2_with(kappa: f64, sigma: f64) -> ProblemSpec {
    build_smooth_convex_problem(SmoothFamilyParams {
        family: SmoothFamily::Case1,
        dims: dims1(),
        horizon: 1.0,
        coeffs: scalar_coeffs(0.0, 1.0, 0.0, 0.0, 0.0, sigma),
        delta: 1.0,
        smooth: SmoothTerms { kappa_x: kappa, kappa_u: 0.0, kappa_g: 1.0 },
        extra: QuadraticCost::zeros(1, 1),
        label: "P2".into(),
    })
    .expect("P2 preset is well formed")
}

/// `g = 0`, `l = ½u²`, `B = 1`, no noise: the optimum is `u ≡ 0` with `V ≡ 0`.
pub fn zero_problem() -> ProblemSpec {
    build_lq_problem(LQData {
        dims: dims1(),
        horizon: 1.0,
        coeffs: scalar_coeffs(0.0, 1.0, 0.0, 0.0, 0.0, 0.0),
        cost: scalar_quadratic(0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0),
        delta: 1.0,
        mode: CertificateMode::Case1,
        label: "zero".into(),
    })
    .expect("zero preset is well formed")
}

/// `g = r·x`, `l = ½u²`, `B = 1`, no noise: `u ≡ −r`, `V(t,x) = r x − ½r²(T−t)`.
pub fn linear_terminal(r: f64) -> ProblemSpec {
    build_lq_problem(LQData {
        dims: dims1(),
        horizon: 1.0,
        coeffs: scalar_coeffs(0.0, 1.0, 0.0, 0.0, 0.0, 0.0),
        cost: scalar_quadratic(0.0, r, 0.0, 0.0, 1.0, 0.0, 0.0),
        delta: 1.0,
        mode: CertificateMode::Case1,
        label: "linear-terminal".into(),
    })
    .expect("linear-terminal preset is well formed")
}

/// A two-dimensional LQ problem with every affine term switched on; used to
/// exercise the Riccati companions and the multi-dimensional code paths.
pub fn coupled_lq_2d() -> ProblemSpec {
    let dims = Dimensions { n: 2, m: 1, d: 2 };
    let coeffs = CoefficientSet::constant(
        DMatrix::from_row_slice(2, 2, &[-0.2, 0.3, 0.0, -0.1]),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
        vec![
            DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.05]),
            DMatrix::zeros(2, 2),
        ],
        vec![
            DMatrix::from_row_slice(2, 1, &[0.2, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 0.1]),
        ],
        DMatrix::from_row_slice(2, 1, &[0.1, -0.05]),
        vec![
            DMatrix::from_row_slice(2, 1, &[0.2, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 0.15]),
        ],
    );
    let cost = QuadraticCost {
        terminal_weight: DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
        terminal_linear: DMatrix::from_row_slice(2, 1, &[0.1, 0.0]),
        state_weight: TimeVarying::Constant(DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.4])),
        cross_weight: TimeVarying::Constant(DMatrix::from_row_slice(1, 2, &[0.1, 0.0])),
        control_weight: TimeVarying::Constant(scalar(1.0)),
        state_linear: TimeVarying::Constant(DMatrix::from_row_slice(2, 1, &[0.05, -0.1])),
        control_linear: TimeVarying::Constant(scalar(0.05)),
    };
    build_lq_problem(LQData {
        dims,
        horizon: 1.0,
        coeffs,
        cost,
        delta: 0.9,
        mode: CertificateMode::Case1,
        label: "coupled-2d".into(),
    })
    .expect("coupled preset is well formed")
}

/// Looks a preset up by name (used by the CLI).
pub fn by_name(name: &str) -> Option<ProblemSpec> {
    Some(match name {
        "P1" | "p1" => p1(0.3),
        "P1-D0.5" | "p1-d" => p1_with_diffusion_control(0.5, 0.3),
        "P2" | "p2" => p2(),
        "zero" => zero_problem(),
        "linear-terminal" => linear_terminal(1.0),
        "coupled-2d" => coupled_lq_2d(),
        _ => return None,
    })
}

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;

use lcflow::descent::{solve_hamiltonian, DescentConfig};
use lcflow::feedback::{minimize_hamiltonian_in_u, FeedbackQuery, NewtonConfig};
use lcflow::paths::{generate_brownian, TimeGrid};
use lcflow::problem::presets::{self, scalar_coeffs, scalar_quadratic};
use lcflow::problem::{build_lq_problem, CertificateMode, Dimensions, LQData, ProblemSpec};
use lcflow::regression::{Design, RegressionBasis};
use lcflow::riccati::{lq_value, solve_riccati_ode};

fn scalar_lq(a: f64, c: f64, q: f64, r: f64, g: f64, sigma: f64) -> ProblemSpec {
    build_lq_problem(LQData {
        dims: Dimensions { n: 1, m: 1, d: 1 },
        horizon: 1.0,
        coeffs: scalar_coeffs(a, 1.0, c, 0.0, 0.0, sigma),
        cost: scalar_quadratic(g, 0.0, q, 0.0, r, 0.0, 0.0),
        delta: r,
        mode: CertificateMode::Case1,
        label: "scalar".into(),
    })
    .unwrap()
}

/// `P' = P²/r − q`, `P(T) = g` for `dX = u dt + σ dW`, solved in closed form.
fn scalar_riccati(q: f64, r: f64, g: f64, remaining: f64) -> f64 {
    let root = (q * r).sqrt();
    let th = ((q / r).sqrt() * remaining).tanh();
    root * (g + root * th) / (root + g * th)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn riccati_matches_closed_form(q in 0.1f64..4.0, r in 0.2f64..3.0, g in 0.0f64..3.0, sigma in 0.0f64..1.0) {
        let spec = scalar_lq(0.0, 0.0, q, r, g, sigma);
        let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let ric = solve_riccati_ode(&spec, grid, 4).unwrap();
        for k in 0..=grid.steps {
            let t = grid.node(k);
            let exact = scalar_riccati(q, r, g, 1.0 - t);
            prop_assert!((ric.p[k][(0, 0)] - exact).abs() <= 1e-6 * (1.0 + exact));
            prop_assert!((ric.gain[k][(0, 0)] + exact / r).abs() <= 1e-6 * (1.0 + exact) / r);
        }
    }

    #[test]
    fn riccati_stays_positive_and_meets_terminal_cost(
        a in -1.0f64..1.0, c in -0.5f64..0.5, q in 0.0f64..2.0, g in 0.0f64..2.0, x in -3.0f64..3.0,
    ) {
        let spec = scalar_lq(a, c, q, 1.0, g, 0.3);
        let grid = TimeGrid::new(0.0, 1.0, 40).unwrap();
        let ric = solve_riccati_ode(&spec, grid, 4).unwrap();
        prop_assert!(ric.p.iter().all(|p| p[(0, 0)] >= -1e-12));
        prop_assert!(ric.margin.iter().all(|&m| m >= 1.0 - 1e-12));
        let end = lq_value(&ric, 1.0, &[x]).unwrap();
        prop_assert!((end.v - 0.5 * g * x * x).abs() <= 1e-12 * (1.0 + x * x));
        prop_assert!((end.dv[0] - g * x).abs() <= 1e-12 * (1.0 + x.abs()));
    }

    #[test]
    fn antithetic_pairs_mirror_and_prefixes_agree(seed in any::<u64>(), half in 1usize..20, steps in 1usize..12) {
        let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
        let small = generate_brownian(grid, 2 * half, 2, seed, true).unwrap();
        let large = generate_brownian(grid, 4 * half, 2, seed, true).unwrap();
        for p in 0..2 * half {
            for k in 0..steps {
                prop_assert_eq!(small.dw(p, k), large.dw(p, k));
                if p % 2 == 0 {
                    let twin: Vec<f64> = small.dw(p + 1, k).iter().map(|v| -v).collect();
                    prop_assert_eq!(small.dw(p, k), twin.as_slice());
                }
            }
        }
        let tail = small.restrict(steps / 2).unwrap();
        prop_assert_eq!(tail.dw(0, 0), small.dw(0, steps / 2));
    }

    #[test]
    fn newton_reaches_a_stationary_minimum(
        t in 0.0f64..1.0, x in -4.0f64..4.0, dv in -5.0f64..5.0, dvv in 0.0f64..3.0, kappa in 0.0f64..2.0,
        probe in -2.0f64..2.0,
    ) {
        let spec = presets::p1_with_diffusion_control(0.5, 0.3);
        let spec = if kappa > 1.0 { presets::p2_with(kappa, 0.3) } else { spec };
        let query = FeedbackQuery::assemble(&spec, t, &[x], &[dv], &DMatrix::from_element(1, 1, dvv));
        let cfg = NewtonConfig::default();
        let out = minimize_hamiltonian_in_u(&spec, &query, &cfg).unwrap();
        prop_assert!(query.gradient(&spec, &out.u).norm() <= cfg.tol * (1.0 + query.p.norm()) * 1.0001);
        let best = query.reduced_hamiltonian(&spec, &out.u);
        prop_assert!(best <= query.reduced_hamiltonian(&spec, &[out.u[0] + probe]) + 1e-12);
    }

    #[test]
    fn quadratic_targets_are_reproduced(
        coef in prop::array::uniform6(-3.0f64..3.0), seed in any::<u64>(),
    ) {
        let paths = 64;
        let noise = generate_brownian(TimeGrid::new(0.0, 1.0, 2).unwrap(), paths, 2, seed, false).unwrap();
        let features: Vec<f64> = (0..paths).flat_map(|p| noise.dw(p, 0).to_vec()).collect();
        let target = |f: &[f64]| {
            coef[0] + coef[1] * f[0] + coef[2] * f[1] + coef[3] * f[0] * f[0] + coef[4] * f[0] * f[1] + coef[5] * f[1] * f[1]
        };
        let targets: Vec<f64> = features.chunks(2).map(target).collect();
        let basis = RegressionBasis { degree: 2, ridge: 0.0 };
        let design = Design::new(basis, &features, paths, 2, 0).unwrap();
        let fit = design.fit(&targets, 1);
        let query = [0.3, -0.7];
        let predicted = design.predict_at(&query, &fit.coef)[0];
        prop_assert!((predicted - target(&query)).abs() <= 1e-7 * (1.0 + target(&query).abs()));
    }
}

#[test]
fn descent_recovers_the_constant_optimum_of_a_linear_terminal_cost() {
    for r in [-1.5, 0.4, 2.0] {
        let spec = presets::linear_terminal(r);
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let noise = generate_brownian(grid, 8, 1, 5, true).unwrap();
        let x0 = 0.7;
        let sol = solve_hamiltonian(&spec, 0.0, &[x0], &noise, RegressionBasis::default(), &DescentConfig::default()).unwrap();
        for p in 0..8 {
            for k in 0..grid.steps {
                assert_relative_eq!(sol.u.u(p, k)[0], -r, epsilon = 1e-4);
            }
        }
        assert_relative_eq!(sol.cost.mean, r * x0 - 0.5 * r * r, epsilon = 1e-7);
    }
}

#[test]
fn zero_problem_is_solved_by_zero_control() {
    let spec = presets::zero_problem();
    let grid = TimeGrid::new(0.0, 1.0, 8).unwrap();
    let noise = generate_brownian(grid, 4, 1, 1, true).unwrap();
    let sol = solve_hamiltonian(&spec, 0.0, &[1.3], &noise, RegressionBasis::default(), &DescentConfig::default()).unwrap();
    assert_eq!(sol.cost.mean, 0.0);
    assert!((0..4).all(|p| (0..8).all(|k| sol.u.u(p, k)[0] == 0.0)));
}

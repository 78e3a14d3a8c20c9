use proptest::prelude::*;
use signorini_core::analysis::{analyze_center, solve_scenario};
use signorini_core::blowup::{BlowupParams, Label};
use signorini_core::coefficients::{CoefficientField, ScenarioRhs};
use signorini_core::epiperimetric::eval_h;
use signorini_core::monitors::{MonitorParams, RadialProfile, SolutionView};
use signorini_core::scenarios::{build, ScenarioParams};
use signorini_core::solver::{solve, ProblemSpec, SolverParams};
use signorini_core::{build_grid, GridField};

#[test]
fn inactive_obstacle_gives_harmonic_solution() {
    // e^{x1} cos(x2) is harmonic; an obstacle far below never touches it.
    let exact = |x: &[f64; 3]| x[0].exp() * x[1].cos();
    let g = build_grid(2, 65).unwrap();
    let data = ScenarioRhs::new(|_| -10.0, |_| 0.0, move |x| exact(x), 0.0);
    let p = ProblemSpec::new(g, CoefficientField::identity(2), data).validate(200).unwrap();
    let s = solve(&p, &SolverParams::default()).unwrap();
    let worst = (0..g.node_count()).fold(0.0f64, |m, i| m.max((s.field.values[i] - exact(&g.point(i))).abs()));
    assert!(worst < 1e-3, "max error {worst}");
    assert!(s.residuals.certified());
}

#[test]
fn exact_scenario_error_shrinks_with_refinement() {
    let sc = build("laplace-exact", &ScenarioParams::default()).unwrap();
    let err = |n: usize| {
        let s = solve_scenario(&sc, n, &SolverParams::default()).unwrap();
        let f = &s.solution.field;
        let (mut e2, mut h2) = (0.0, 0.0);
        for i in 0..f.grid.node_count() {
            let h = eval_h(&f.grid.point(i), 2);
            e2 += (f.values[i] - h).powi(2);
            h2 += h * h;
        }
        (e2 / h2).sqrt()
    };
    let (a, b) = (err(33), err(65));
    assert!(b < a && b < 1e-3, "{a} {b}");
}

#[test]
fn library_centers_classify() {
    for (name, want) in [
        ("laplace-exact", Label::Regular),
        ("nonzero-obstacle", Label::Regular),
        ("frequency-two", Label::NonRegular),
    ] {
        let sc = build(name, &ScenarioParams::default()).unwrap();
        let s = solve_scenario(&sc, 65, &SolverParams::default()).unwrap();
        let a = analyze_center(&s, &BlowupParams::default()).unwrap();
        assert_eq!(a.classification.label, want, "{name}: {:?}", a.classification);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn complementarity_holds_for_random_caps(cap in 0.0..0.2f64, tilt in -0.3..0.3f64, amp in 0.5..2.0f64) {
        let g = build_grid(2, 33).unwrap();
        let obstacle = move |x: &[f64; 3]| cap * (1.0 - x[0] * x[0]);
        let data = ScenarioRhs::new(
            obstacle,
            |_| 0.0,
            move |x| amp * eval_h(x, 2) + tilt * x[0] + obstacle(x) + 0.3,
            0.0,
        );
        data.check_compatibility(&g).unwrap();
        let p = ProblemSpec::new(g, CoefficientField::identity(2), data).validate(100).unwrap();
        let s = solve(&p, &SolverParams::default()).unwrap();
        prop_assert!(s.residuals.certified(), "{:?}", s.residuals);
        for k in 0..g.thin_count() {
            let v = s.field.values[g.thin_node(k)];
            prop_assert!(v >= s.obstacle[k] - s.residuals.tol_c);
        }
    }

    #[test]
    fn frequency_is_scale_invariant(lambda in 0.1..10.0f64) {
        let g = build_grid(2, 65).unwrap();
        let c = CoefficientField::identity(2);
        let f = GridField::from_fn(g, |x| eval_h(x, 2));
        let fl = GridField::from_fn(g, |x| lambda * eval_h(x, 2));
        let view = |f| SolutionView { field: f, coefficients: &c, rhs: None };
        let p = RadialProfile::compute(view(&f), &MonitorParams::default()).unwrap();
        let q = RadialProfile::compute(view(&fl), &MonitorParams::default()).unwrap();
        for k in 0..p.len() {
            prop_assert!((p.n[k] - q.n[k]).abs() < 1e-9 * p.n[k].abs().max(1.0));
            prop_assert!((q.h[k] - lambda * lambda * p.h[k]).abs() <= 1e-9 * q.h[k].abs());
        }
    }
}

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;

use super::*;
use crate::noise::{CovarianceSpec, DiffusionSpec, H0Vector};
use crate::seed::rng_from_seed;
use crate::spectral::Grid;
use crate::SdeParams;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn system(n: usize, sigma: f64, multiplicative: bool, truncation: Option<u32>, u0_amp: f64) -> SdeSystem {
    let grid = Grid::for_sigma(n, 4 * n, sigma).unwrap();
    let cov = Arc::new(CovarianceSpec::power_law(n, 2.0, 1.0).unwrap());
    let spec = if multiplicative {
        DiffusionSpec::multiplicative(0.8, &cov)
    } else {
        DiffusionSpec::additive(1.0, &cov)
    };
    let u0 = SpectralField::from_coeffs(&grid, (1..=n).map(|k| c(u0_amp / (k * k) as f64, 0.0)).collect()).unwrap();
    SdeSystem::new(SdeParams::new(1.0, sigma, 0.0, truncation, u0).unwrap(), spec, cov).unwrap()
}

fn random_control(sys: &SdeSystem, time: &TimeGrid, dim: usize, scale: f64, seed: u64) -> Control {
    let mut rng = rng_from_seed(seed);
    let values = (0..time.n_steps())
        .map(|_| {
            let mut h = H0Vector::zeros(&sys.cov);
            for z in h.coords_mut().iter_mut().take(dim) {
                *z = c(scale * rng.random_range(-1.0..1.0), scale * rng.random_range(-1.0..1.0));
            }
            h
        })
        .collect();
    Control::unbounded(values)
}

#[test]
fn action_examples() {
    let sys = system(4, 1.0, false, None, 0.5);
    let time = TimeGrid::new(2.0, 40).unwrap();
    assert_eq!(action_of_control(&Control::zero(&sys.cov, 40), &time), 0.0);

    let h = H0Vector::new(&sys.cov, vec![c(0.6, 0.8), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
    let constant = Control::constant(h.clone(), 40);
    assert!((action_of_control(&constant, &time) - 1.0).abs() < 1e-12);

    let mut single = vec![H0Vector::zeros(&sys.cov); 40];
    single[7] = h;
    assert!((action_of_control(&Control::unbounded(single), &time) - time.dt() / 2.0).abs() < 1e-15);
}

#[test]
fn action_is_quadratic() {
    let sys = system(4, 1.0, false, None, 0.5);
    let time = TimeGrid::new(1.0, 16).unwrap();
    let h = random_control(&sys, &time, 4, 1.0, 3);
    let base = action_of_control(&h, &time);
    for a in [0.0, 0.5, 3.0, -2.0] {
        let scaled = Control::unbounded(
            h.values()
                .iter()
                .map(|v| H0Vector::combine(c(a, 0.0), v, c(0.0, 0.0), v).unwrap())
                .collect(),
        );
        let got = action_of_control(&scaled, &time);
        assert!((got - a * a * base).abs() <= 1e-12 * base.max(1.0));
    }
}

#[test]
fn adjoint_matches_finite_differences() {
    let cases = [
        (1.0, false, None, 1.0),
        (2.0, false, None, 1.0),
        (1.0, true, None, 1.0),
        (1.0, true, Some(1), 1.5),
    ];
    for (i, &(sigma, mult, trunc, amp)) in cases.iter().enumerate() {
        let sys = system(6, sigma, mult, trunc, amp);
        let time = TimeGrid::new(0.5, 12).unwrap();
        let target = SpectralField::mode(sys.grid(), 2, c(0.3, -0.2)).unwrap();
        let problem = ActionProblem::new(&sys, time, TargetSpec::EndpointMatch { target, tol: 1e-3 }, 10.0, 3).unwrap();
        let h = random_control(&sys, &time, 3, 0.5, 11 + i as u64);
        let rel = gradient_check(&problem, &h, 10.0).unwrap();
        assert!(rel < 1e-4, "case {i}: relative gradient error {rel}");
    }
}

#[test]
fn adjoint_handles_ball_targets() {
    let sys = system(4, 1.0, true, None, 0.8);
    let time = TimeGrid::new(0.5, 10).unwrap();
    for target in [
        TargetSpec::BallExterior { r: 2.0 },
        TargetSpec::BallInterior { r: 0.05 },
    ] {
        let problem = ActionProblem::new(&sys, time, target, 5.0, 2).unwrap();
        let h = random_control(&sys, &time, 2, 0.3, 5);
        let rel = gradient_check(&problem, &h, 5.0).unwrap();
        assert!(rel < 1e-4, "relative gradient error {rel}");
    }
}

#[test]
fn witness_domination_for_reachable_target() {
    let sys = system(4, 1.0, false, None, 0.5);
    let time = TimeGrid::new(0.5, 10).unwrap();
    let witness = random_control(&sys, &time, 2, 1.0, 21);
    let end = sys.solve_skeleton(&witness, &time).unwrap().final_field().clone();
    let problem = ActionProblem::new(
        &sys,
        time,
        TargetSpec::EndpointMatch { target: end, tol: 1e-3 },
        100.0,
        2,
    )
    .unwrap();
    let res = minimize_action(&problem).unwrap();
    let bound = action_of_control(&witness, &time);
    assert_eq!(res.gradient_used, GradientMethod::Adjoint);
    assert!(res.action_value <= bound * 1.001, "{} > {}", res.action_value, bound);
    assert!(res.constraint_residual < 1e-4, "residual {}", res.constraint_residual);
    assert!((res.action_value - action_of_control(&res.h_star, &time)).abs() < 1e-12);
}

#[test]
fn finite_difference_path_agrees_with_adjoint_path() {
    let sys = system(4, 1.0, false, None, 0.5);
    let time = TimeGrid::new(0.5, 8).unwrap();
    let problem = ActionProblem::new(&sys, time, TargetSpec::BallExterior { r: 0.6 }, 100.0, 2).unwrap();
    let adj = minimize_action(&problem).unwrap();
    let fd = minimize_action(&problem.clone().with_options(OptimizerOptions {
        gradient: GradientMethod::FiniteDifference,
        ..Default::default()
    }))
    .unwrap();
    assert_eq!(fd.gradient_used, GradientMethod::FiniteDifference);
    assert!((adj.action_value - fd.action_value).abs() < 1e-4 * adj.action_value);
}

#[test]
fn target_met_at_start_costs_nothing() {
    let sys = system(4, 1.0, false, None, 1.0);
    let mass = sys.params.u0.mass();
    let time = TimeGrid::new(0.5, 10).unwrap();
    let problem = ActionProblem::new(&sys, time, TargetSpec::BallExterior { r: 0.5 * mass }, 10.0, 2).unwrap();
    let res = minimize_action(&problem).unwrap();
    assert!(res.action_value <= 1e-9);
    assert_eq!(res.constraint_residual, 0.0);
}

#[test]
fn larger_radius_costs_more() {
    let sys = system(4, 1.0, false, None, 0.5);
    let mass = sys.params.u0.mass();
    let time = TimeGrid::new(0.5, 10).unwrap();
    let problems: Vec<_> = [1.5, 2.0, 3.0]
        .iter()
        .rev()
        .map(|f| ActionProblem::new(&sys, time, TargetSpec::BallExterior { r: f * mass }, 100.0, 2).unwrap())
        .collect();
    let rows = rate_lower_envelope(&problems).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.windows(2).all(|w| w[0].r < w[1].r));
    for w in rows.windows(2) {
        assert!(w[1].i_star >= w[0].i_star - 1e-6, "{:?}", rows);
    }
    assert!(rows[0].i_star > 0.0);
}

#[test]
fn envelope_edge_cases() {
    assert!(rate_lower_envelope(&[]).unwrap().is_empty());
    let sys = system(4, 1.0, false, None, 0.5);
    let time = TimeGrid::new(0.5, 10).unwrap();
    let p = ActionProblem::new(&sys, time, TargetSpec::BallExterior { r: 0.5 }, 100.0, 2).unwrap();
    let rows = rate_lower_envelope(std::slice::from_ref(&p)).unwrap();
    let single = minimize_action(&p).unwrap();
    assert_eq!(rows[0].i_star, single.action_value);

    let other = ActionProblem::new(
        &sys.with_u0(SpectralField::zeros(sys.grid())).unwrap(),
        time,
        TargetSpec::BallExterior { r: 0.5 },
        100.0,
        2,
    )
    .unwrap();
    assert!(rate_lower_envelope(&[p, other]).is_err());
}

#[test]
fn restarts_agree_on_a_convex_looking_problem() {
    let sys = system(4, 1.0, false, None, 0.5);
    let time = TimeGrid::new(0.5, 8).unwrap();
    let problem = ActionProblem::new(&sys, time, TargetSpec::BallExterior { r: 0.6 }, 100.0, 2).unwrap();
    let report = minimize_with_restarts(&problem, 5, 0.1, 9).unwrap();
    assert_eq!(report.values.len(), 5);
    assert!(!report.multimodal, "{:?}", report.values);
}

#[test]
fn rejects_bad_problems() {
    let sys = system(4, 1.0, false, None, 0.5);
    let time = TimeGrid::new(0.5, 10).unwrap();
    let ball = TargetSpec::BallExterior { r: 1.0 };
    assert!(ActionProblem::new(&sys, time, ball.clone(), 0.0, 2).is_err());
    assert!(ActionProblem::new(&sys, time, ball, 1.0, 5).is_err());
    assert!(ActionProblem::new(&sys, time, TargetSpec::BallExterior { r: -1.0 }, 1.0, 2).is_err());
    let other = Grid::new(5, 20).unwrap();
    let bad = TargetSpec::EndpointMatch {
        target: SpectralField::zeros(&other),
        tol: 0.1,
    };
    assert!(matches!(
        ActionProblem::new(&sys, time, bad, 1.0, 2),
        Err(Error::GridMismatch)
    ));
}

#[test]
fn budget_is_checked_on_export() {
    let sys = system(4, 1.0, false, None, 0.5);
    let time = TimeGrid::new(0.5, 10).unwrap();
    let base = ActionProblem::new(&sys, time, TargetSpec::BallExterior { r: 0.8 }, 100.0, 2).unwrap();
    let free = minimize_action(&base).unwrap();
    let energy = 2.0 * free.action_value;
    let roomy = minimize_action(&base.clone().with_budget(2.0 * energy)).unwrap();
    assert!(roomy.within_budget);
    assert_eq!(roomy.h_star.budget(), 2.0 * energy);
    let tight = minimize_action(&base.with_budget(0.5 * energy)).unwrap();
    assert!(!tight.within_budget);
}

#[test]
fn exterior_action_matches_linear_oracle() {
    // lambda = 0: the flow is unitary mode by mode, so the cheapest exit
    // pushes along the rotated u0 in mode 1 over the whole horizon, at cost
    // (sqrt(r) - ||u0||)^2 / (2 lambda_1 T).
    let grid = Grid::new(4, 8).unwrap();
    let cov = Arc::new(CovarianceSpec::power_law(4, 2.0, 1.0).unwrap());
    let u0 = SpectralField::mode(&grid, 1, c(0.5, 0.0)).unwrap();
    let sys = SdeSystem::new(
        SdeParams::new(0.0, 1.0, 0.0, None, u0).unwrap(),
        DiffusionSpec::additive(1.0, &cov),
        cov,
    )
    .unwrap();
    let time = TimeGrid::new(1.0, 16).unwrap();
    let r = 0.8;
    let problem = ActionProblem::new(&sys, time, TargetSpec::BallExterior { r }, 100.0, 2).unwrap();
    let res = minimize_action(&problem).unwrap();
    let exact = (r.sqrt() - 0.5f64).powi(2) / (2.0 * sys.cov.eigenvalues()[0] * 1.0);
    assert!(res.constraint_residual < 1e-5, "residual {}", res.constraint_residual);
    assert!(
        (res.action_value - exact).abs() < 1e-3 * exact,
        "{} vs {exact}",
        res.action_value
    );
}

#[test]
fn damped_exit_spreads_the_push() {
    // Witness: push along the rotating mode-1 phase on every step, scaled
    // by bisection until the skeleton just leaves the ball.
    let grid = Grid::new(4, 8).unwrap();
    let cov = Arc::new(CovarianceSpec::power_law(4, 2.0, 1.0).unwrap());
    let u0 = SpectralField::mode(&grid, 1, c(0.5, 0.0)).unwrap();
    let sys = SdeSystem::new(
        SdeParams::new(1.0, 1.0, 0.0, None, u0).unwrap(),
        DiffusionSpec::additive(1.0, &cov),
        cov,
    )
    .unwrap();
    let time = TimeGrid::new(1.0, 20).unwrap();
    let r = 0.5;
    let witness = |s: f64| {
        let values = (0..20)
            .map(|j| {
                let mut h = H0Vector::zeros(&sys.cov);
                h.coords_mut()[0] = Complex64::from_polar(s, -PI * PI * time.time(j));
                h
            })
            .collect();
        Control::unbounded(values)
    };
    let peak = |s: f64| {
        sys.solve_skeleton(&witness(s), &time)
            .unwrap()
            .mass
            .iter()
            .cloned()
            .fold(0.0, f64::max)
    };
    let (mut lo, mut hi) = (0.0, 10.0);
    assert!(peak(hi) > r);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if peak(mid) > r {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let bound = action_of_control(&witness(hi), &time);
    let problem = ActionProblem::new(&sys, time, TargetSpec::BallExterior { r }, 100.0, 2).unwrap();
    let res = minimize_action(&problem).unwrap();
    assert!(res.constraint_residual < 1e-5);
    assert!(
        res.action_value <= bound * 1.001,
        "{} > witness {bound}",
        res.action_value
    );
}

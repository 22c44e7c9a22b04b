mod common;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use robust_risk::asymptotics::{
    alpha_curve, solve_system, solve_system_with, system_residuals, NoiseKind, NoiseModel,
    SystemOptions,
};
use robust_risk::loss::{BaseLoss, ScaledLoss};
use robust_risk::tuner::LambdaGrid;

/// `E[min(W², c)]` for W ~ t(2), from the antiderivative of w²(2 + w²)^{-3/2}.
fn t2_truncated_second_moment(c: f64) -> f64 {
    let a = c.sqrt();
    let inner = 2.0 * ((a / 2f64.sqrt()).asinh() - a / (2.0 + a * a).sqrt());
    let tail = 1.0 - a / (2.0 + a * a).sqrt();
    inner + c * tail
}

#[test]
fn noise_expectations_match_closed_form() {
    let noise = NoiseModel::new(NoiseKind::StudentT(2.0)).unwrap();
    for c in [1.0, 4.0, 25.0] {
        let grid = noise.expect(|w| (w * w).min(c));
        let exact = t2_truncated_second_moment(c);
        assert!(
            (grid / exact - 1.0).abs() < 2e-3,
            "c {c}: grid {grid} exact {exact}"
        );
    }
}

#[test]
fn noise_expectation_matches_sampling() {
    let noise = NoiseModel::new(NoiseKind::StudentT(3.0)).unwrap();
    let t = StudentT::new(3.0).unwrap();
    let mut rng = common::rng(80);
    let samples = 10_000_000;
    for c in [1.0, 4.0, 25.0] {
        let mc: f64 = (0..samples)
            .map(|_| {
                let w: f64 = t.sample(&mut rng);
                (w * w).min(c)
            })
            .sum::<f64>()
            / samples as f64;
        let grid = noise.expect(|w| (w * w).min(c));
        assert!((grid / mc - 1.0).abs() < 2e-3, "c {c}: grid {grid} mc {mc}");
    }
}

/// Residuals of the system estimated by plain Monte Carlo, with the Huber
/// prox written from its case analysis.
fn monte_carlo_residuals(
    alpha: f64,
    kappa: f64,
    lambda: f64,
    gamma: f64,
    samples: usize,
) -> (f64, f64, f64, f64) {
    let t = StudentT::new(2.0).unwrap();
    let mut rng = common::rng(81);
    let (mut s1, mut s1sq, mut s2, mut s2sq) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..samples {
        let z: f64 = StandardNormal.sample(&mut rng);
        let w: f64 = t.sample(&mut rng);
        let x = alpha * z + w;
        let u = if x.abs() <= lambda * (1.0 + kappa) {
            x / (1.0 + kappa)
        } else {
            x - kappa * lambda * x.signum()
        };
        let a = (x - u).powi(2) - alpha * alpha * gamma;
        let b = (x - u) * z - alpha * gamma;
        s1 += a;
        s1sq += a * a;
        s2 += b;
        s2sq += b * b;
    }
    let m = samples as f64;
    let se = |s: f64, sq: f64| ((sq / m - (s / m).powi(2)) / m).sqrt();
    (s1 / m, se(s1, s1sq), s2 / m, se(s2, s2sq))
}

#[test]
fn solution_is_a_fixed_point_under_monte_carlo() {
    let noise = NoiseModel::new(NoiseKind::StudentT(2.0)).unwrap();
    let loss = ScaledLoss::huber(2.0).unwrap();
    let sol = solve_system(&loss, &noise, 0.3, None).unwrap();
    let (r1, se1, r2, se2) = monte_carlo_residuals(sol.alpha, sol.kappa, 2.0, 0.3, 1_000_000);
    assert!(r1.abs() < 4.0 * se1, "r1 {r1} se {se1}");
    assert!(r2.abs() < 4.0 * se2, "r2 {r2} se {se2}");
    let (r1, se1, _, _) = monte_carlo_residuals(sol.alpha * 1.1, sol.kappa, 2.0, 0.3, 1_000_000);
    assert!(r1.abs() > 4.0 * se1);
}

#[test]
fn returned_solutions_have_small_residuals() {
    let noise = NoiseModel::new(NoiseKind::StudentT(2.0)).unwrap();
    for base in [BaseLoss::Huber, BaseLoss::PseudoHuber] {
        for lambda in [0.5, 2.0, 8.0] {
            let loss = base.scaled(lambda).unwrap();
            let sol = solve_system(&loss, &noise, 0.3, None).unwrap();
            assert!(sol.residual_norm <= 1e-8);
            let (r1, r2) = system_residuals(sol.alpha, sol.kappa, &loss, &noise, 0.3);
            assert!(r1.abs().max(r2.abs()) <= 1e-8);
        }
    }
}

#[test]
fn least_squares_limit() {
    let noise = NoiseModel::new(NoiseKind::Gaussian(1.0)).unwrap();
    let loss = ScaledLoss::huber(1e6).unwrap();
    for gamma in [0.25, 0.5] {
        let sol = solve_system(&loss, &noise, gamma, None).unwrap();
        assert!((sol.alpha_sq() - gamma / (1.0 - gamma)).abs() < 1e-3);
    }
}

#[test]
fn solution_does_not_depend_on_the_start() {
    let noise = NoiseModel::new(NoiseKind::StudentT(2.0)).unwrap();
    let loss = ScaledLoss::huber(2.0).unwrap();
    let reference = solve_system(&loss, &noise, 0.3, None).unwrap();
    let mut rng = common::rng(82);
    for _ in 0..8 {
        let init = (rng.gen_range(0.2..5.0), rng.gen_range(0.1..5.0));
        let sol = solve_system(&loss, &noise, 0.3, Some(init)).unwrap();
        assert!(
            (sol.alpha_sq() - reference.alpha_sq()).abs() < 1e-6,
            "init {init:?}"
        );
    }
}

#[test]
fn doubling_the_hermite_order_changes_little() {
    let noise = NoiseModel::new(NoiseKind::StudentT(2.0)).unwrap();
    let loss = ScaledLoss::huber(2.0).unwrap();
    let a = solve_system(&loss, &noise, 0.3, None).unwrap();
    let opts = SystemOptions {
        hermite_order: 162,
        ..SystemOptions::default()
    };
    let b = solve_system_with(&loss, &noise, 0.3, None, &opts).unwrap();
    assert!((a.alpha_sq() - b.alpha_sq()).abs() < 1e-4);
    assert_eq!(b.quadrature.hermite_order, 162);
}

#[test]
fn sampled_noise_nodes_are_seed_stable() {
    let loss = ScaledLoss::huber(1.0).unwrap();
    let a = NoiseModel::with_grid(NoiseKind::GaussianPlusCauchy, 4001, 1).unwrap();
    let b = NoiseModel::with_grid(NoiseKind::GaussianPlusCauchy, 4001, 2).unwrap();
    let sa = solve_system(&loss, &a, 0.3, None).unwrap();
    let sb = solve_system(&loss, &b, 0.3, None).unwrap();
    assert!((sa.alpha_sq() / sb.alpha_sq() - 1.0).abs() < 5e-3);
    assert_eq!(sa.quadrature.seed, 1);
}

#[test]
fn discrete_noise_uses_integer_atoms() {
    let noise = NoiseModel::new(NoiseKind::DiscreteCeilT {
        scale: 1.0,
        df: 2.0,
    })
    .unwrap();
    assert!(noise.nodes().iter().all(|w| w.fract() == 0.0));
    let total: f64 = noise.weights().iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    let sol = solve_system(&ScaledLoss::huber(1.0).unwrap(), &noise, 0.3, None).unwrap();
    assert!(sol.alpha_sq().is_finite() && sol.alpha_sq() > 0.0);
}

#[test]
fn curve_is_finite_and_regular() {
    let noise = NoiseModel::new(NoiseKind::StudentT(2.0)).unwrap();
    let coarse = alpha_curve(
        &BaseLoss::Huber,
        &noise,
        0.3,
        &LambdaGrid::make_grid(1.0, 10.0, 101).unwrap(),
    )
    .unwrap();
    let fine = alpha_curve(
        &BaseLoss::Huber,
        &noise,
        0.3,
        &LambdaGrid::make_grid(1.0, 10.0, 201).unwrap(),
    )
    .unwrap();
    for curve in [&coarse, &fine] {
        assert!(curve
            .iter()
            .all(|c| c.converged && c.alpha_sq.is_finite() && c.alpha_sq > 0.0));
    }
    let holder_max = |c: &[robust_risk::asymptotics::CurvePoint]| {
        c.windows(2)
            .map(|w| (w[1].alpha_sq - w[0].alpha_sq).abs() / (w[1].lambda - w[0].lambda).sqrt())
            .fold(0.0, f64::max)
    };
    let (a, b) = (holder_max(&coarse), holder_max(&fine));
    assert!(b <= a * 1.01, "coarse {a} fine {b}");
    for (i, c) in coarse.iter().enumerate() {
        assert!((c.alpha_sq - fine[2 * i].alpha_sq).abs() < 1e-6);
    }
}

#[test]
fn residual_near_the_origin_without_noise() {
    let noise = NoiseModel::new(NoiseKind::Gaussian(0.0)).unwrap();
    let alpha = 1e-3;
    for lambda in [0.5, 1.0, 3.0] {
        let loss = ScaledLoss::huber(lambda).unwrap();
        for kappa in [0.1, 0.5, 1.0, 10.0] {
            let (r1, _) = system_residuals(alpha, kappa, &loss, &noise, 0.3);
            let shrink = kappa / (1.0 + kappa);
            let exact = alpha * alpha * (shrink * shrink - 0.3);
            assert!(
                (r1 - exact).abs() < 1e-12 * alpha * alpha + 1e-18,
                "lambda {lambda} kappa {kappa}: {r1}"
            );
            if shrink < 0.3f64.sqrt() {
                assert!(r1 < 0.0);
            }
        }
    }
}

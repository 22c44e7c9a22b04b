mod common;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use robust_risk::data::Dataset;
use robust_risk::loss::ScaledLoss;
use robust_risk::solver::{self, FitOptions};

#[test]
fn huge_lambda_is_least_squares() {
    let mut rng = common::rng(50);
    let x = common::gaussian_matrix(50, 2, &mut rng);
    let y = DVector::from_fn(50, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    });
    let ols = (x.transpose() * &x)
        .cholesky()
        .unwrap()
        .solve(&(x.transpose() * &y));
    let data = Dataset::new(x, y).unwrap();
    let fit = solver::fit(
        &data,
        &ScaledLoss::huber(1e6).unwrap(),
        &FitOptions::default(),
    )
    .unwrap();
    assert!((fit.beta_hat - ols).amax() < 1e-6);
}

#[test]
fn heavy_tailed_fit_beats_zero() {
    let data = common::t_noise_data(200, 50, 2.0, 51);
    let loss = ScaledLoss::huber(1.0).unwrap();
    let fit = solver::fit(&data, &loss, &FitOptions::default()).unwrap();
    assert!(fit.converged);
    assert!(fit.kkt_residual <= 1e-8);
    let at_zero = solver::objective(&data, &loss, 0.0, &DVector::zeros(50));
    assert!(fit.objective() < at_zero);
    assert!(fit.objective_path.windows(2).all(|w| w[1] <= w[0]));
    for i in 0..data.n() {
        assert_eq!(fit.psi_vals[i], loss.psi(fit.residuals[i]));
    }
}

#[test]
fn objective_never_increases() {
    let mut rng = common::rng(52);
    for k in 0..10 {
        let n = rng.gen_range(60..300);
        let p = rng.gen_range(2..n / 3);
        let data = common::t_noise_data(n, p, 1.5, 100 + k);
        let loss = if k % 2 == 0 {
            ScaledLoss::huber(rng.gen_range(0.2..3.0)).unwrap()
        } else {
            ScaledLoss::pseudo_huber(rng.gen_range(0.2..3.0)).unwrap()
        };
        let fit = solver::fit(&data, &loss, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(
            fit.objective_path.windows(2).all(|w| w[1] <= w[0]),
            "case {k}"
        );
    }
}

#[test]
fn row_permutation_leaves_estimate_unchanged() {
    let data = common::t_noise_data(150, 20, 2.0, 53);
    let mut order: Vec<usize> = (0..150).collect();
    order.shuffle(&mut common::rng(54));
    let x = DMatrix::from_fn(150, 20, |i, j| data.x()[(order[i], j)]);
    let y = DVector::from_fn(150, |i, _| data.y()[order[i]]);
    let permuted = Dataset::new(x, y).unwrap();
    for loss in [
        ScaledLoss::huber(1.0).unwrap(),
        ScaledLoss::pseudo_huber(1.0).unwrap(),
    ] {
        let opts = FitOptions::default().with_kkt_tol(1e-13);
        let a = solver::fit(&data, &loss, &opts).unwrap();
        let b = solver::fit(&permuted, &loss, &opts).unwrap();
        assert!((a.beta_hat - b.beta_hat).amax() <= 1e-10);
    }
}

#[test]
fn rank_deficient_design_is_rejected() {
    let mut rng = common::rng(55);
    let mut x = common::gaussian_matrix(40, 4, &mut rng);
    let c = x.column(0).clone_owned();
    x.set_column(3, &(c * 2.0));
    let data = Dataset::new(x, DVector::zeros(40)).unwrap();
    let err = solver::fit(
        &data,
        &ScaledLoss::huber(1.0).unwrap(),
        &FitOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, robust_risk::Error::RankDeficient(_)));
}

#[test]
fn ridge_is_closer_to_zero_than_the_fit() {
    let data = common::t_noise_data(400, 120, 2.0, 56);
    let loss = ScaledLoss::huber(1.0).unwrap();
    let opts = FitOptions::default();
    let plain = solver::fit(&data, &loss, &opts).unwrap();
    let mu = 400f64.powf(-0.25);
    let ridge = solver::fit_ridge(&data, &loss, mu, &opts).unwrap();
    let gap = (&ridge.beta_hat - &plain.beta_hat).norm_squared();
    assert!(gap <= plain.beta_hat.norm_squared() - ridge.beta_hat.norm_squared() + 1e-6);
    let g = data.x().transpose() * &ridge.psi_vals - &ridge.beta_hat * (400.0 * mu);
    assert!(g.norm() / 400.0 <= 1e-8);
}

#[test]
fn ridge_fit_without_noise_satisfies_kkt() {
    let mut rng = common::rng(57);
    let x = common::gaussian_matrix(80, 8, &mut rng);
    let beta = DVector::from_fn(8, |i, _| i as f64 - 3.0);
    let y = &x * &beta;
    let data = Dataset::new(x, y).unwrap();
    for mu in [1e-3, 0.1, 1.0] {
        let fit = solver::fit_ridge(
            &data,
            &ScaledLoss::huber(1.0).unwrap(),
            mu,
            &FitOptions::default(),
        )
        .unwrap();
        assert!(fit.converged);
        assert!(fit.beta_hat.norm() < beta.norm());
        let kkt = solver::kkt_residual(&data, &ScaledLoss::huber(1.0).unwrap(), mu, &fit.beta_hat);
        assert!(kkt <= 1e-8);
    }
}

#[test]
fn ridge_smoothing_gap_shrinks_with_n() {
    let mut gaps = Vec::new();
    for (k, n) in [400usize, 1600].into_iter().enumerate() {
        let p = (0.3 * n as f64) as usize;
        let data = common::t_noise_data(n, p, 2.0, 58 + k as u64);
        let loss = ScaledLoss::huber(1.0).unwrap();
        let opts = FitOptions::default();
        let plain = solver::fit(&data, &loss, &opts).unwrap();
        let mu = (n as f64).powf(-0.25);
        let ridge = solver::fit_ridge(&data, &loss, mu, &opts).unwrap();
        let diff = (&plain.beta_hat - &ridge.beta_hat).norm();
        let psi_gap = (&ridge.psi_vals - &plain.psi_vals).norm_squared() / n as f64;
        assert!(psi_gap <= mu * ridge.beta_hat.norm() * diff + 1e-8);
        gaps.push(diff);
    }
    assert!(gaps[1] < gaps[0], "{gaps:?}");
}

#[test]
fn kkt_holds_on_random_fits() {
    let mut rng = common::rng(59);
    for k in 0..20 {
        let n = rng.gen_range(30..500);
        let p = rng.gen_range(1..n / 2);
        let data = common::t_noise_data(n, p, rng.gen_range(1.0..5.0), 200 + k);
        let loss = ScaledLoss::huber(rng.gen_range(0.1..5.0)).unwrap();
        let fit = solver::fit(&data, &loss, &FitOptions::default()).unwrap();
        if fit.converged {
            let g = data.x().transpose() * &fit.psi_vals;
            assert!(g.norm() / n as f64 <= 1e-8);
        }
    }
}

#[test]
fn warm_start_reaches_the_same_point() {
    let data = common::t_noise_data(300, 60, 2.0, 60);
    let opts = FitOptions::default().with_kkt_tol(1e-12);
    let a = solver::fit(&data, &ScaledLoss::huber(1.0).unwrap(), &opts).unwrap();
    let b = solver::fit(&data, &ScaledLoss::huber(1.3).unwrap(), &opts).unwrap();
    let warm =
        solver::fit_warm(&data, &ScaledLoss::huber(1.3).unwrap(), &opts, &a.beta_hat).unwrap();
    assert!((warm.beta_hat - b.beta_hat).amax() < 1e-9);
}

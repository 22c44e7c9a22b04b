mod common;

use robust_risk::loss::BaseLoss;
use robust_risk::risk;
use robust_risk::solver::{self, FitOptions};
use robust_risk::tuner::{self, LambdaGrid};

#[test]
fn selected_lambda_minimises_the_estimate() {
    for seed in 0..5 {
        let data = common::t_noise_data(300, 90, 2.0, 90 + seed);
        let grid = LambdaGrid::make_grid(0.5, 8.0, 21).unwrap();
        let rep = tuner::tune(&data, &BaseLoss::Huber, &grid, &FitOptions::default()).unwrap();
        let best = rep.rows[rep.selected_index].r_hat;
        assert!(rep.rows.iter().all(|r| r.degenerate || r.r_hat >= best));
        assert!(rep.rows[..rep.selected_index]
            .iter()
            .all(|r| r.degenerate || r.r_hat > best));
        assert_eq!(rep.selected_lambda, grid.points()[rep.selected_index]);
    }
}

#[test]
fn rows_match_independent_fits() {
    let data = common::t_noise_data(250, 60, 2.0, 95);
    let grid = LambdaGrid::make_grid(1.0, 5.0, 6).unwrap();
    let opts = FitOptions::default();
    let rep = tuner::tune(&data, &BaseLoss::Huber, &grid, &opts).unwrap();
    for row in &rep.rows {
        let loss = BaseLoss::Huber.scaled(row.lambda).unwrap();
        let fit = solver::fit(&data, &loss, &opts).unwrap();
        let est = risk::estimate_risk(&fit, &data, &loss).unwrap();
        assert!((row.r_hat / est.r_hat - 1.0).abs() < 1e-6);
        assert_eq!(row.trace_v, est.trace_v);
    }
}

#[test]
fn refining_the_grid_never_raises_the_minimum() {
    let data = common::t_noise_data(300, 90, 2.0, 96);
    let opts = FitOptions::default();
    let coarse = tuner::tune(
        &data,
        &BaseLoss::Huber,
        &LambdaGrid::make_grid(1.0, 10.0, 11).unwrap(),
        &opts,
    )
    .unwrap();
    let fine = tuner::tune(
        &data,
        &BaseLoss::Huber,
        &LambdaGrid::make_grid(1.0, 10.0, 21).unwrap(),
        &opts,
    )
    .unwrap();
    let min_coarse = coarse.rows[coarse.selected_index].r_hat;
    let min_fine = fine.rows[fine.selected_index].r_hat;
    assert!(min_fine <= min_coarse * (1.0 + 1e-6));
}

#[test]
fn observer_sees_every_fit_in_order() {
    let data = common::t_noise_data(200, 40, 2.0, 97);
    let grid = LambdaGrid::make_grid(1.0, 4.0, 7).unwrap();
    let mut seen = Vec::new();
    tuner::tune_with_observer(
        &data,
        &BaseLoss::PseudoHuber,
        &grid,
        &FitOptions::default(),
        |i, fit| {
            assert!(fit.converged);
            seen.push(i);
        },
    )
    .unwrap();
    assert_eq!(seen, (0..7).collect::<Vec<_>>());
}

#[test]
fn rank_deficient_data_is_an_error() {
    let data = common::t_noise_data(10, 5, 2.0, 98);
    let x = nalgebra::DMatrix::from_fn(10, 5, |i, j| data.x()[(i, j % 2)]);
    let bad = robust_risk::data::Dataset::new(x, data.y().clone()).unwrap();
    let grid = LambdaGrid::make_grid(1.0, 2.0, 3).unwrap();
    assert!(tuner::tune(&bad, &BaseLoss::Huber, &grid, &FitOptions::default()).is_err());
}

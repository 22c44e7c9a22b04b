//! Data-driven choice of the loss scale λ by minimising R̂ over a grid.

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{BaseLoss, ScaledLoss};
use crate::risk;
use crate::solver::{self, FitOptions, FitResult, Workspace};

pub const DEFAULT_GRID_POINTS: usize = 101;

/// Candidate λ values in ascending order.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaGrid {
    points: Vec<f64>,
}

impl LambdaGrid {
    /// `λ_i = λ_min (λ_max/λ_min)^{i/(N−1)}` for i = 0..N−1, endpoints exact.
    pub fn make_grid(lambda_min: f64, lambda_max: f64, n_points: usize) -> Result<Self> {
        if !(lambda_min > 0.0 && lambda_min.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda_min must be positive, got {lambda_min}"
            )));
        }
        if !(lambda_max > lambda_min && lambda_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda_max must exceed lambda_min, got [{lambda_min}, {lambda_max}]"
            )));
        }
        if n_points < 2 {
            return Err(Error::InvalidParameter(
                "grid needs at least two points".into(),
            ));
        }
        let last = (n_points - 1) as f64;
        let ratio = lambda_max / lambda_min;
        let mut points: Vec<f64> = (0..n_points)
            .map(|i| lambda_min * ratio.powf(i as f64 / last))
            .collect();
        points[0] = lambda_min;
        points[n_points - 1] = lambda_max;
        Ok(Self { points })
    }

    /// Arbitrary non-decreasing positive points. Repeated values are allowed.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("grid is empty".into()));
        }
        if points.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter(
                "grid points must be positive".into(),
            ));
        }
        if points.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParameter(
                "grid points must be non-decreasing".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct TuningRow {
    pub lambda: f64,
    pub r_hat: f64,
    pub trace_v: f64,
    pub psi_sq_norm: f64,
    pub kkt_residual: f64,
    pub degenerate: bool,
}

#[derive(Clone, Debug)]
pub struct TuningReport {
    pub rows: Vec<TuningRow>,
    pub selected_lambda: f64,
    pub selected_index: usize,
}

/// Fits every grid point in ascending order with warm starts and selects the
/// smallest non-degenerate R̂.
pub fn tune(
    data: &Dataset,
    base: &BaseLoss,
    grid: &LambdaGrid,
    opts: &FitOptions,
) -> Result<TuningReport> {
    tune_with_observer(data, base, grid, opts, |_, _| {})
}

/// [`tune`] that also hands every fit to `observer` together with its grid
/// index.
pub fn tune_with_observer<F>(
    data: &Dataset,
    base: &BaseLoss,
    grid: &LambdaGrid,
    opts: &FitOptions,
    observer: F,
) -> Result<TuningReport>
where
    F: FnMut(usize, &FitResult),
{
    select(risk_path(data, base, grid, opts, observer)?)
}

/// One row per grid point without selecting a λ. Fits run in ascending order,
/// each warm-started at the previous converged solution. Numerical failures
/// produce degenerate rows.
pub fn risk_path<F>(
    data: &Dataset,
    base: &BaseLoss,
    grid: &LambdaGrid,
    opts: &FitOptions,
    mut observer: F,
) -> Result<Vec<TuningRow>>
where
    F: FnMut(usize, &FitResult),
{
    opts.validate()?;
    data.ensure_full_rank()?;
    let mut workspace = Workspace::default();
    let mut start = None;
    let mut rows = Vec::with_capacity(grid.len());
    for (i, &lambda) in grid.points().iter().enumerate() {
        let loss = base.scaled(lambda)?;
        let fit = solver::fit_warm_cached(data, &loss, opts, start.as_ref(), &mut workspace);
        let row = match fit {
            Ok(fit) => {
                let row = row_from_fit(&fit, data, &loss, lambda);
                observer(i, &fit);
                if fit.converged {
                    start = Some(fit.beta_hat);
                }
                row
            }
            Err(e) if e.is_numerical() => failed_row(lambda),
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Cold-start variant that fits the grid points concurrently.
pub fn tune_parallel(
    data: &Dataset,
    base: &BaseLoss,
    grid: &LambdaGrid,
    opts: &FitOptions,
) -> Result<TuningReport> {
    opts.validate()?;
    data.ensure_full_rank()?;
    let rows = grid
        .points()
        .par_iter()
        .map(|&lambda| -> Result<TuningRow> {
            let loss = base.scaled(lambda)?;
            match solver::fit(data, &loss, opts) {
                Ok(fit) => Ok(row_from_fit(&fit, data, &loss, lambda)),
                Err(e) if e.is_numerical() => Ok(failed_row(lambda)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    select(rows)
}

fn row_from_fit(fit: &FitResult, data: &Dataset, loss: &ScaledLoss, lambda: f64) -> TuningRow {
    if !fit.converged {
        return TuningRow {
            kkt_residual: fit.kkt_residual,
            ..failed_row(lambda)
        };
    }
    match risk::estimate_risk(fit, data, loss) {
        Ok(est) => TuningRow {
            lambda,
            r_hat: est.r_hat,
            trace_v: est.trace_v,
            psi_sq_norm: est.psi_sq_norm,
            kkt_residual: fit.kkt_residual,
            degenerate: est.degenerate,
        },
        Err(_) => TuningRow {
            kkt_residual: fit.kkt_residual,
            ..failed_row(lambda)
        },
    }
}

fn failed_row(lambda: f64) -> TuningRow {
    TuningRow {
        lambda,
        r_hat: f64::INFINITY,
        trace_v: f64::NAN,
        psi_sq_norm: f64::NAN,
        kkt_residual: f64::NAN,
        degenerate: true,
    }
}

/// Picks the smallest finite, non-degenerate R̂; ties go to the first row.
pub fn select(rows: Vec<TuningRow>) -> Result<TuningReport> {
    let mut best: Option<usize> = None;
    for (i, row) in rows.iter().enumerate() {
        if row.degenerate || !row.r_hat.is_finite() {
            continue;
        }
        if best.is_none_or(|b| row.r_hat < rows[b].r_hat) {
            best = Some(i);
        }
    }
    let idx = best.ok_or(Error::TuningFailed)?;
    Ok(TuningReport {
        selected_lambda: rows[idx].lambda,
        selected_index: idx,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, StudentT};

    fn heavy_tailed(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        });
        let t = StudentT::new(2.0).unwrap();
        let y = DVector::from_fn(n, |_, _| t.sample(&mut rng));
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn grid_examples() {
        let g = LambdaGrid::make_grid(1.0, 4.0, 3).unwrap();
        assert_eq!(g.points()[0], 1.0);
        assert!((g.points()[1] - 2.0).abs() < 1e-15);
        assert_eq!(g.points()[2], 4.0);

        let g = LambdaGrid::make_grid(1.0, 10.0, 101).unwrap();
        for (i, &l) in g.points().iter().enumerate() {
            assert!((l / 10f64.powf(i as f64 / 100.0) - 1.0).abs() < 1e-14);
        }

        let g = LambdaGrid::make_grid(2.0, 2.0000001, 2).unwrap();
        assert_eq!(g.len(), 2);
        assert!(g.points().iter().all(|l| (l - 2.0).abs() < 1e-6));
        assert!(g.points()[0] < g.points()[1]);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(LambdaGrid::make_grid(0.0, 1.0, 5).is_err());
        assert!(LambdaGrid::make_grid(2.0, 1.0, 5).is_err());
        assert!(LambdaGrid::make_grid(1.0, 2.0, 1).is_err());
        assert!(LambdaGrid::from_points(vec![2.0, 1.0]).is_err());
        assert!(LambdaGrid::from_points(vec![]).is_err());
    }

    #[test]
    fn single_point_grid_selects_it() {
        let data = heavy_tailed(120, 20, 1);
        let grid = LambdaGrid::from_points(vec![1.5]).unwrap();
        let rep = tune(&data, &BaseLoss::Huber, &grid, &FitOptions::default()).unwrap();
        assert_eq!(rep.selected_lambda, 1.5);
        assert_eq!(rep.selected_index, 0);
    }

    #[test]
    fn ties_go_to_the_smaller_index() {
        let data = heavy_tailed(120, 20, 2);
        let grid = LambdaGrid::from_points(vec![1.0, 2.0, 2.0, 3.0]).unwrap();
        let rep = tune(&data, &BaseLoss::Huber, &grid, &FitOptions::default()).unwrap();
        let min = rep
            .rows
            .iter()
            .map(|r| r.r_hat)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(rep.rows[rep.selected_index].r_hat, min);
        if rep.rows[1].r_hat == rep.rows[2].r_hat
            && rep.selected_index >= 1
            && rep.selected_index <= 2
        {
            assert_eq!(rep.selected_index, 1);
        }
        let tied = vec![
            TuningRow {
                lambda: 1.0,
                r_hat: 2.0,
                trace_v: 1.0,
                psi_sq_norm: 1.0,
                kkt_residual: 0.0,
                degenerate: false,
            },
            TuningRow {
                lambda: 2.0,
                r_hat: 1.0,
                trace_v: 1.0,
                psi_sq_norm: 1.0,
                kkt_residual: 0.0,
                degenerate: false,
            },
            TuningRow {
                lambda: 2.0,
                r_hat: 1.0,
                trace_v: 1.0,
                psi_sq_norm: 1.0,
                kkt_residual: 0.0,
                degenerate: false,
            },
        ];
        assert_eq!(select(tied).unwrap().selected_index, 1);
    }

    #[test]
    fn all_degenerate_fails() {
        let rows = vec![failed_row(1.0), failed_row(2.0)];
        assert!(matches!(select(rows), Err(Error::TuningFailed)));
    }

    #[test]
    fn parallel_matches_sequential() {
        let data = heavy_tailed(200, 40, 3);
        let grid = LambdaGrid::make_grid(0.5, 5.0, 9).unwrap();
        let opts = FitOptions::default();
        let a = tune(&data, &BaseLoss::Huber, &grid, &opts).unwrap();
        let b = tune_parallel(&data, &BaseLoss::Huber, &grid, &opts).unwrap();
        assert_eq!(a.selected_index, b.selected_index);
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert!((x.r_hat - y.r_hat).abs() <= 1e-6 * x.r_hat.max(1.0));
        }
    }
}

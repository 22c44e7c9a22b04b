//! Unregularized M-estimation and its ridge-smoothed variant.
//!
//! Both estimators minimise
//!
//! ```text
//! F(β) = Σ_i ρ_λ(y_i − x_iᵀβ) + (n μ / 2) ‖β‖²
//! ```
//!
//! with μ = 0 for the plain M-estimator. The solver is a damped Newton (IRLS)
//! iteration with Hessian `Xᵀ diag(ψ_λ'(r)) X + nμ I`, a Levenberg shift that
//! adapts to step quality, and an Armijo backtracking line search. Convergence
//! is declared on the normalised KKT residual `‖Xᵀψ_λ(r) − nμβ‖₂ / n`.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::loss::ScaledLoss;

const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_HALVINGS: usize = 60;
const INITIAL_DAMPING: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct FitOptions {
    /// Tolerance on `‖Xᵀψ − nμβ‖₂ / n`.
    pub kkt_tol: f64,
    pub max_iter: usize,
    /// Lower bound for the Levenberg shift.
    pub damping_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-8,
            max_iter: 500,
            damping_floor: 1e-10,
        }
    }
}

impl FitOptions {
    pub fn with_kkt_tol(mut self, tol: f64) -> Self {
        self.kkt_tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kkt_tol > 0.0) {
            return Err(Error::InvalidParameter("kkt_tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter(
                "max_iter must be at least 1".into(),
            ));
        }
        if !(self.damping_floor >= 0.0) {
            return Err(Error::InvalidParameter(
                "damping_floor must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub beta_hat: DVector<f64>,
    /// `r = y − Xβ̂`.
    pub residuals: DVector<f64>,
    /// `ψ_λ(r)`, evaluated componentwise.
    pub psi_vals: DVector<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Ridge parameter μ; zero for the unregularized estimator.
    pub ridge_mu: f64,
    /// Objective value after each accepted iterate, starting with the initial point.
    pub objective_path: Vec<f64>,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        self.objective_path.last().copied().unwrap_or(f64::NAN)
    }
}

/// Fits the unregularized M-estimator starting from β = 0.
pub fn fit(data: &Dataset, loss: &ScaledLoss, opts: &FitOptions) -> Result<FitResult> {
    data.ensure_full_rank()?;
    minimize(data.x(), data.y(), loss, 0.0, opts, None)
}

/// Same as [`fit`] but starting from `start`.
pub fn fit_warm(
    data: &Dataset,
    loss: &ScaledLoss,
    opts: &FitOptions,
    start: &DVector<f64>,
) -> Result<FitResult> {
    data.ensure_full_rank()?;
    minimize(data.x(), data.y(), loss, 0.0, opts, Some(start))
}

/// Fits the ridge-smoothed estimator with penalty `(μ/2)‖β‖²` added to the
/// averaged loss.
pub fn fit_ridge(
    data: &Dataset,
    loss: &ScaledLoss,
    mu: f64,
    opts: &FitOptions,
) -> Result<FitResult> {
    fit_ridge_warm(data, loss, mu, opts, None)
}

pub fn fit_ridge_warm(
    data: &Dataset,
    loss: &ScaledLoss,
    mu: f64,
    opts: &FitOptions,
    start: Option<&DVector<f64>>,
) -> Result<FitResult> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "ridge parameter mu must be positive, got {mu}"
        )));
    }
    minimize(data.x(), data.y(), loss, mu, opts, start)
}

/// Objective `Σ ρ_λ(y − Xβ) + (nμ/2)‖β‖²` at an arbitrary β.
pub fn objective(data: &Dataset, loss: &ScaledLoss, mu: f64, beta: &DVector<f64>) -> f64 {
    let r = data.y() - data.x() * beta;
    objective_from_residuals(loss, mu, data.n(), &r, beta)
}

/// `‖Xᵀψ_λ(y − Xβ) − nμβ‖₂ / n` at an arbitrary β.
pub fn kkt_residual(data: &Dataset, loss: &ScaledLoss, mu: f64, beta: &DVector<f64>) -> f64 {
    let r = data.y() - data.x() * beta;
    let psi = r.map(|v| loss.psi(v));
    let n = data.n() as f64;
    let g = linalg::xt_times(data.x(), &psi) - beta * (n * mu);
    g.norm() / n
}

fn objective_from_residuals(
    loss: &ScaledLoss,
    mu: f64,
    n: usize,
    r: &DVector<f64>,
    beta: &DVector<f64>,
) -> f64 {
    let data_term: f64 = r.iter().map(|&v| loss.rho(v)).sum();
    if mu > 0.0 {
        data_term + 0.5 * n as f64 * mu * beta.norm_squared()
    } else {
        data_term
    }
}

/// Hessian state `Xᵀ diag(w) X`, refreshed incrementally when few weights change.
struct Curvature {
    weights: Vec<f64>,
    gram: DMatrix<f64>,
}

impl Curvature {
    fn new(x: &DMatrix<f64>, weights: Vec<f64>) -> Self {
        let gram = linalg::weighted_gram(x, &weights);
        Self { weights, gram }
    }

    fn refresh(&mut self, x: &DMatrix<f64>, weights: Vec<f64>) {
        let changed: Vec<usize> = (0..weights.len())
            .filter(|&i| weights[i] != self.weights[i])
            .collect();
        if changed.is_empty() {
            return;
        }
        if changed.len() * 6 > weights.len() {
            self.gram = linalg::weighted_gram(x, &weights);
        } else {
            let delta: Vec<f64> = changed
                .iter()
                .map(|&i| weights[i] - self.weights[i])
                .collect();
            linalg::gram_update(&mut self.gram, x, &changed, &delta);
        }
        self.weights = weights;
    }
}

/// Damped Newton iteration shared by every fitting entry point. Operates on the
/// raw design.
pub(crate) fn minimize(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    loss: &ScaledLoss,
    mu: f64,
    opts: &FitOptions,
    start: Option<&DVector<f64>>,
) -> Result<FitResult> {
    minimize_cached(x, y, loss, mu, opts, start, &mut Workspace::default())
}

/// Reusable Hessian storage for sequences of fits on one design, such as a
/// sweep over λ. Consecutive fits whose curvature weights barely change only
/// pay for a low-rank update instead of a full Gram product.
#[derive(Default)]
pub struct Workspace {
    curvature: Option<Curvature>,
}

/// [`fit_warm`] with a [`Workspace`] carried between calls on the same data.
pub fn fit_warm_cached(
    data: &Dataset,
    loss: &ScaledLoss,
    opts: &FitOptions,
    start: Option<&DVector<f64>>,
    workspace: &mut Workspace,
) -> Result<FitResult> {
    data.ensure_full_rank()?;
    minimize_cached(data.x(), data.y(), loss, 0.0, opts, start, workspace)
}

fn minimize_cached(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    loss: &ScaledLoss,
    mu: f64,
    opts: &FitOptions,
    start: Option<&DVector<f64>>,
    workspace: &mut Workspace,
) -> Result<FitResult> {
    opts.validate()?;
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::InvalidParameter("response length mismatch".into()));
    }
    let nf = n as f64;
    let ridge = nf * mu;

    let mut beta = match start {
        Some(b) if b.len() == p => b.clone(),
        Some(b) => {
            return Err(Error::InvalidParameter(format!(
                "warm start has length {} but p = {p}",
                b.len()
            )))
        }
        None => DVector::zeros(p),
    };
    let mut r = y - x * &beta;
    let mut psi = r.map(|v| loss.psi(v));
    let mut f = objective_from_residuals(loss, mu, n, &r, &beta);
    let mut grad = linalg::xt_times(x, &psi) - &beta * ridge;
    let mut kkt = grad.norm() / nf;
    let weights: Vec<f64> = r.iter().map(|&v| loss.psi_prime(v)).collect();
    let mut curvature = match workspace.curvature.take() {
        Some(mut c) if c.weights.len() == n && c.gram.nrows() == p => {
            c.refresh(x, weights);
            c
        }
        _ => Curvature::new(x, weights),
    };

    let scale = {
        let op = linalg::psd_op_norm(&curvature.gram);
        if op > 0.0 {
            op
        } else {
            x.norm_squared() / p as f64
        }
    };
    let mut damping = (INITIAL_DAMPING * scale / p as f64).max(opts.damping_floor);

    let mut path = vec![f];
    let mut iterations = 0;
    let mut converged = kkt <= opts.kkt_tol;

    while !converged && iterations < opts.max_iter {
        iterations += 1;

        let Some(chol) = linalg::shifted_cholesky(&curvature.gram, ridge + damping) else {
            damping *= 10.0;
            continue;
        };
        let step = chol.solve(&grad);
        let slope = grad.dot(&step);
        if !(slope > 0.0) || !slope.is_finite() {
            damping *= 10.0;
            continue;
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &beta + &step * t;
            let r_c = y - x * &cand;
            let f_c = objective_from_residuals(loss, mu, n, &r_c, &cand);
            if f_c <= f - ARMIJO_C1 * t * slope {
                accepted = Some((cand, r_c, f_c));
                break;
            }
            // Near the optimum the decrease drops below rounding of F; accept if
            // F does not grow beyond that and the KKT residual improves.
            if f_c <= f + 8.0 * f64::EPSILON * f.abs() {
                let psi_c = r_c.map(|v| loss.psi(v));
                let g_c = linalg::xt_times(x, &psi_c) - &cand * ridge;
                if g_c.norm() / nf < kkt {
                    accepted = Some((cand, r_c, f_c.min(f)));
                    break;
                }
            }
            t *= BACKTRACK;
        }

        let Some((cand, r_c, f_c)) = accepted else {
            damping *= 10.0;
            continue;
        };
        if t == 1.0 {
            damping = (damping * 0.1).max(opts.damping_floor);
        } else {
            damping *= 10.0;
        }

        beta = cand;
        r = r_c;
        f = f_c;
        psi = r.map(|v| loss.psi(v));
        grad = linalg::xt_times(x, &psi) - &beta * ridge;
        kkt = grad.norm() / nf;
        curvature.refresh(x, r.iter().map(|&v| loss.psi_prime(v)).collect());
        path.push(f);
        converged = kkt <= opts.kkt_tol;
    }
    workspace.curvature = Some(curvature);

    Ok(FitResult {
        beta_hat: beta,
        residuals: r,
        psi_vals: psi,
        kkt_residual: kkt,
        iterations,
        converged,
        ridge_mu: mu,
        objective_path: path,
    })
}

//! Observable out-of-sample error estimate and the Jacobian trace it needs.
//!
//! For a fit β̂ with residuals r and ψ̂ = ψ_λ(r), the estimate is
//!
//! ```text
//! R̂ = p ‖ψ̂‖² / tr[V]²,   V = ∂ψ_λ(y − Xβ̂(y)) / ∂y
//! ```
//!
//! The trace has closed forms for Huber and for twice-differentiable losses.
//! A finite-difference oracle that refits at perturbed responses is provided
//! for cross-checks and as a fallback.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::loss::ScaledLoss;
use crate::solver::{self, FitOptions, FitResult};

/// Default step for coordinate finite differences.
pub const COORDINATE_STEP: f64 = 1e-6;
/// Default step for Rademacher finite differences.
pub const HUTCHINSON_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceMethod {
    HuberClosedForm,
    SmoothClosedForm,
    FiniteDifference,
    Hutchinson,
}

impl TraceMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            TraceMethod::HuberClosedForm => "huber_closed_form",
            TraceMethod::SmoothClosedForm => "smooth_closed_form",
            TraceMethod::FiniteDifference => "finite_difference",
            TraceMethod::Hutchinson => "hutchinson",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TraceResult {
    pub trace_v: f64,
    pub method: TraceMethod,
    /// Set when the closed form was unusable and finite differences were used.
    pub fallback: bool,
}

#[derive(Clone, Debug)]
pub struct RiskEstimate {
    pub r_hat: f64,
    pub psi_sq_norm: f64,
    pub trace_v: f64,
    pub trace_method: TraceMethod,
    pub degenerate: bool,
}

/// Probe vectors for the finite-difference trace.
#[derive(Clone, Copy, Debug)]
pub enum FdProbes {
    /// All n coordinate vectors. Exact up to the step size.
    Coordinate,
    /// `count` Rademacher vectors drawn from a seeded generator.
    Rademacher { count: usize, seed: u64 },
}

/// Smallest trace treated as informative for a sample of size n.
pub fn trace_floor(n: usize) -> f64 {
    (1e-6 * n as f64).max(1.0)
}

/// Trace of the Jacobian of `y ↦ ψ_λ(y − Xβ̂(y))` at a converged fit.
pub fn trace_jacobian(fit: &FitResult, data: &Dataset, loss: &ScaledLoss) -> Result<TraceResult> {
    check_fit(fit, data)?;
    let x = data.x();
    let d: Vec<f64> = fit.residuals.iter().map(|&r| loss.psi_prime(r)).collect();
    let sum_d: f64 = d.iter().sum();

    if fit.ridge_mu > 0.0 {
        let gram = linalg::weighted_gram(x, &d);
        let shift = data.n() as f64 * fit.ridge_mu;
        let chol = linalg::shifted_cholesky(&gram, shift)
            .ok_or_else(|| Error::Numerical("ridge Hessian is not positive definite".into()))?;
        let d2: Vec<f64> = d.iter().map(|v| v * v).collect();
        let trace = sum_d - linalg::trace_solve(&chol, &linalg::weighted_gram(x, &d2));
        return Ok(TraceResult {
            trace_v: trace,
            method: TraceMethod::SmoothClosedForm,
            fallback: false,
        });
    }

    if loss.base().is_huber() {
        let inliers = fit.residuals.iter().filter(|&&r| loss.is_inlier(r)).count();
        let trace = (inliers as f64 - data.p() as f64).max(0.0);
        return Ok(TraceResult {
            trace_v: trace,
            method: TraceMethod::HuberClosedForm,
            fallback: false,
        });
    }

    let gram = linalg::weighted_gram(x, &d);
    match linalg::shifted_cholesky(&gram, 0.0) {
        Some(chol) => {
            let d2: Vec<f64> = d.iter().map(|v| v * v).collect();
            let trace = sum_d - linalg::trace_solve(&chol, &linalg::weighted_gram(x, &d2));
            Ok(TraceResult {
                trace_v: trace,
                method: TraceMethod::SmoothClosedForm,
                fallback: false,
            })
        }
        None => {
            let opts = FitOptions::default();
            let trace = fd_trace_from(
                fit,
                data,
                loss,
                &opts,
                COORDINATE_STEP,
                FdProbes::Coordinate,
            )?;
            Ok(TraceResult {
                trace_v: trace,
                method: TraceMethod::FiniteDifference,
                fallback: true,
            })
        }
    }
}

/// Finite-difference estimate of tr[V] that refits β̂ at each perturbed
/// response. Refits warm-start from the fit at the observed response.
pub fn trace_jacobian_fd_oracle(
    data: &Dataset,
    loss: &ScaledLoss,
    opts: &FitOptions,
    step: f64,
    probes: FdProbes,
) -> Result<f64> {
    let base = solver::fit(data, loss, &oracle_options(opts))?;
    if !base.converged {
        return Err(Error::Oracle("unperturbed fit did not converge".into()));
    }
    fd_trace_from(&base, data, loss, opts, step, probes)
}

/// Same oracle for the ridge-smoothed estimator with parameter `mu`.
pub fn trace_jacobian_fd_oracle_ridge(
    data: &Dataset,
    loss: &ScaledLoss,
    mu: f64,
    opts: &FitOptions,
    step: f64,
    probes: FdProbes,
) -> Result<f64> {
    let base = solver::fit_ridge(data, loss, mu, &oracle_options(opts))?;
    if !base.converged {
        return Err(Error::Oracle("unperturbed fit did not converge".into()));
    }
    fd_trace_from(&base, data, loss, opts, step, probes)
}

fn oracle_options(opts: &FitOptions) -> FitOptions {
    opts.clone().with_kkt_tol(opts.kkt_tol.min(1e-12))
}

fn fd_trace_from(
    base: &FitResult,
    data: &Dataset,
    loss: &ScaledLoss,
    opts: &FitOptions,
    step: f64,
    probes: FdProbes,
) -> Result<f64> {
    let inner = oracle_options(opts);
    let x = data.x();
    let mu = base.ridge_mu;
    let start = base.beta_hat.clone();
    let map = |y: &DVector<f64>| -> Result<DVector<f64>> {
        let res = solver::minimize(x, y, loss, mu, &inner, Some(&start))?;
        if !res.converged {
            return Err(Error::Oracle(format!(
                "refit did not converge (KKT residual {:.3e})",
                res.kkt_residual
            )));
        }
        Ok(res.psi_vals)
    };
    hutchinson_trace(map, data.y(), step, probes)
}

/// Central-difference trace estimator for an arbitrary map `f: Rⁿ → Rⁿ`:
/// the average of `ζᵀ[f(y + hζ) − f(y − hζ)] / 2h` over the probes.
pub fn hutchinson_trace<F>(
    mut map: F,
    point: &DVector<f64>,
    step: f64,
    probes: FdProbes,
) -> Result<f64>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "step must be positive, got {step}"
        )));
    }
    let n = point.len();
    let mut probe_dot = |zeta: &DVector<f64>| -> Result<f64> {
        let plus = map(&(point + zeta * step))?;
        let minus = map(&(point - zeta * step))?;
        Ok(zeta.dot(&(plus - minus)) / (2.0 * step))
    };
    match probes {
        FdProbes::Coordinate => {
            let mut total = 0.0;
            let mut e = DVector::zeros(n);
            for i in 0..n {
                e[i] = 1.0;
                total += probe_dot(&e)?;
                e[i] = 0.0;
            }
            Ok(total)
        }
        FdProbes::Rademacher { count, seed } => {
            if count == 0 {
                return Err(Error::InvalidParameter("need at least one probe".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut total = 0.0;
            for _ in 0..count {
                let zeta = DVector::from_fn(n, |_, _| if rng.gen::<bool>() { 1.0 } else { -1.0 });
                total += probe_dot(&zeta)?;
            }
            Ok(total / count as f64)
        }
    }
}

/// R̂ for an unregularized fit.
pub fn estimate_risk(fit: &FitResult, data: &Dataset, loss: &ScaledLoss) -> Result<RiskEstimate> {
    if fit.ridge_mu > 0.0 {
        return Err(Error::Unsupported(
            "risk estimation is defined for unregularized fits only".into(),
        ));
    }
    let trace = trace_jacobian(fit, data, loss)?;
    Ok(risk_from_parts(
        data.p(),
        data.n(),
        fit.psi_vals.norm_squared(),
        trace.trace_v,
        trace.method,
    ))
}

/// Assembles R̂ from its ingredients, flagging small traces.
pub fn risk_from_parts(
    p: usize,
    n: usize,
    psi_sq_norm: f64,
    trace_v: f64,
    trace_method: TraceMethod,
) -> RiskEstimate {
    let degenerate = !(trace_v > trace_floor(n));
    let r_hat = if degenerate {
        f64::INFINITY
    } else {
        p as f64 * psi_sq_norm / (trace_v * trace_v)
    };
    RiskEstimate {
        r_hat,
        psi_sq_norm,
        trace_v,
        trace_method,
        degenerate,
    }
}

/// Out-of-sample error `(β̂ − β⋆)ᵀ Σ (β̂ − β⋆)`, with Σ = I when absent.
pub fn oracle_risk(fit: &FitResult, data: &Dataset) -> Result<f64> {
    let beta_star = data
        .beta_star()
        .ok_or_else(|| Error::Unsupported("oracle risk needs a known beta_star".into()))?;
    Ok(sigma_norm_sq(&(&fit.beta_hat - beta_star), data.sigma()))
}

fn sigma_norm_sq(h: &DVector<f64>, sigma: Option<&DMatrix<f64>>) -> f64 {
    match sigma {
        Some(s) => h.dot(&(s * h)),
        None => h.norm_squared(),
    }
}

fn check_fit(fit: &FitResult, data: &Dataset) -> Result<()> {
    if !fit.converged {
        return Err(Error::InvalidParameter(
            "trace requires a converged fit".into(),
        ));
    }
    if fit.residuals.len() != data.n() || fit.beta_hat.len() != data.p() {
        return Err(Error::InvalidParameter("fit does not match dataset".into()));
    }
    Ok(())
}

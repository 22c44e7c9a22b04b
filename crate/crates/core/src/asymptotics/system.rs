//! The two-equation system for (α, κ) and its solver.
//!
//! With x = αZ + W, Z ~ N(0, 1) independent of the noise W:
//!
//! ```text
//! r1 = E[(x − prox[κρ_λ](x))²] − α²γ
//! r2 = E[(x − prox[κρ_λ](x)) Z] − αγ
//! ```
//!
//! α² is the limiting out-of-sample error of the M-estimator at aspect ratio γ.

use serde::Serialize;

use super::noise::NoiseModel;
use super::quadrature::{GaussHermite, DEFAULT_HERMITE_ORDER};
use crate::error::{Error, Result};
use crate::loss::{BaseLoss, ScaledLoss};
use crate::tuner::LambdaGrid;

#[derive(Clone, Debug)]
pub struct SystemOptions {
    pub hermite_order: usize,
    /// Max-norm tolerance on (r1, r2).
    pub tol: f64,
    pub max_iter: usize,
    /// Relative step of the forward-difference Jacobian.
    pub fd_step: f64,
    pub retries: usize,
}

impl Default for SystemOptions {
    fn default() -> Self {
        Self {
            hermite_order: DEFAULT_HERMITE_ORDER,
            tol: 1e-8,
            max_iter: 200,
            fd_step: 1e-6,
            retries: 8,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct QuadratureInfo {
    pub hermite_order: usize,
    pub noise_nodes: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SystemSolution {
    pub alpha: f64,
    pub kappa: f64,
    pub r1: f64,
    pub r2: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    pub quadrature: QuadratureInfo,
}

impl SystemSolution {
    pub fn alpha_sq(&self) -> f64 {
        self.alpha * self.alpha
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CurvePoint {
    pub lambda: f64,
    /// NaN when the solve failed at this λ.
    pub alpha_sq: f64,
    pub kappa: f64,
    pub residual: f64,
    pub converged: bool,
}

/// Evaluates (r1, r2) with the default Hermite order.
pub fn system_residuals(
    alpha: f64,
    kappa: f64,
    loss: &ScaledLoss,
    noise: &NoiseModel,
    gamma: f64,
) -> (f64, f64) {
    let gh = GaussHermite::new(DEFAULT_HERMITE_ORDER).unwrap();
    Residuals::new(loss, noise, gamma, &gh).eval(alpha, kappa)
}

struct Residuals<'a> {
    loss: &'a ScaledLoss,
    noise: &'a NoiseModel,
    gamma: f64,
    gh: &'a GaussHermite,
}

impl<'a> Residuals<'a> {
    fn new(loss: &'a ScaledLoss, noise: &'a NoiseModel, gamma: f64, gh: &'a GaussHermite) -> Self {
        Self {
            loss,
            noise,
            gamma,
            gh,
        }
    }

    fn eval(&self, alpha: f64, kappa: f64) -> (f64, f64) {
        let ws = self.noise.nodes();
        let pw = self.noise.weights();
        let mut e_sq = 0.0;
        let mut e_z = 0.0;
        if self.loss.base().is_huber() {
            let lam = self.loss.lambda();
            let scale = kappa * lam;
            let inv = 1.0 / (lam * (1.0 + kappa));
            for (&z, &gz) in self.gh.nodes.iter().zip(&self.gh.weights) {
                let az = alpha * z;
                let mut sq = 0.0;
                let mut lin = 0.0;
                for (&w, &p) in ws.iter().zip(pw) {
                    let d = scale * ((az + w) * inv).clamp(-1.0, 1.0);
                    sq += p * d * d;
                    lin += p * d;
                }
                e_sq += gz * sq;
                e_z += gz * z * lin;
            }
        } else {
            for (&z, &gz) in self.gh.nodes.iter().zip(&self.gh.weights) {
                let az = alpha * z;
                let mut sq = 0.0;
                let mut lin = 0.0;
                for (&w, &p) in ws.iter().zip(pw) {
                    let d = self.loss.prox_residual(kappa, az + w).unwrap_or(f64::NAN);
                    sq += p * d * d;
                    lin += p * d;
                }
                e_sq += gz * sq;
                e_z += gz * z * lin;
            }
        }
        (e_sq - alpha * alpha * self.gamma, e_z - alpha * self.gamma)
    }
}

/// Solves the system with default options.
pub fn solve_system(
    loss: &ScaledLoss,
    noise: &NoiseModel,
    gamma: f64,
    init: Option<(f64, f64)>,
) -> Result<SystemSolution> {
    solve_system_with(loss, noise, gamma, init, &SystemOptions::default())
}

/// Damped Newton in (log α, log κ). On failure, restarts from multiplicative
/// perturbations of the initial point.
pub fn solve_system_with(
    loss: &ScaledLoss,
    noise: &NoiseModel,
    gamma: f64,
    init: Option<(f64, f64)>,
    opts: &SystemOptions,
) -> Result<SystemSolution> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma must lie in (0, 1), got {gamma}"
        )));
    }
    let (a0, k0) = init.unwrap_or_else(|| (noise.iqr_scale(), 1.0));
    if !(a0 > 0.0 && k0 > 0.0 && a0.is_finite() && k0.is_finite()) {
        return Err(Error::InvalidParameter(
            "initial point must be positive".into(),
        ));
    }
    let gh = GaussHermite::new(opts.hermite_order)?;
    let res = Residuals::new(loss, noise, gamma, &gh);
    let info = QuadratureInfo {
        hermite_order: opts.hermite_order,
        noise_nodes: noise.nodes().len(),
        seed: noise.seed(),
    };

    const PERTURB: [(f64, f64); 8] = [
        (2.0, 1.0),
        (0.5, 1.0),
        (1.0, 2.0),
        (1.0, 0.5),
        (2.0, 2.0),
        (0.5, 0.5),
        (4.0, 0.25),
        (0.25, 4.0),
    ];
    let starts = std::iter::once((1.0, 1.0)).chain(PERTURB.iter().copied().take(opts.retries));
    let mut best = f64::INFINITY;
    for (fa, fk) in starts {
        match newton(&res, (a0 * fa).ln(), (k0 * fk).ln(), opts) {
            Ok((la, lk, r1, r2, iterations)) => {
                return Ok(SystemSolution {
                    alpha: la.exp(),
                    kappa: lk.exp(),
                    r1,
                    r2,
                    residual_norm: r1.abs().max(r2.abs()),
                    iterations,
                    quadrature: info,
                })
            }
            Err(r) => best = best.min(r),
        }
    }
    Err(Error::NoConvergence {
        best_residual: best,
    })
}

/// Returns the solution in log coordinates or the best residual seen.
fn newton(
    res: &Residuals,
    mut la: f64,
    mut lk: f64,
    opts: &SystemOptions,
) -> std::result::Result<(f64, f64, f64, f64, usize), f64> {
    let norm = |r: (f64, f64)| r.0.abs().max(r.1.abs());
    let mut f = res.eval(la.exp(), lk.exp());
    let mut best = norm(f);
    if !best.is_finite() {
        return Err(f64::INFINITY);
    }
    for it in 0..opts.max_iter {
        if norm(f) <= opts.tol {
            return Ok((la, lk, f.0, f.1, it));
        }
        let h = opts.fd_step;
        let fa = res.eval((la + h).exp(), lk.exp());
        let fk = res.eval(la.exp(), (lk + h).exp());
        let j = [
            [(fa.0 - f.0) / h, (fk.0 - f.0) / h],
            [(fa.1 - f.1) / h, (fk.1 - f.1) / h],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if !(det.abs() > 0.0) || !det.is_finite() {
            return Err(best);
        }
        let da = -(j[1][1] * f.0 - j[0][1] * f.1) / det;
        let dk = -(-j[1][0] * f.0 + j[0][0] * f.1) / det;
        // Cap the step in log space so a poor Jacobian cannot overflow exp.
        let cap = (2.0 / da.abs().max(dk.abs())).min(1.0);
        let mut t = cap;
        let current = norm(f);
        let mut moved = false;
        for _ in 0..40 {
            let (na, nk) = (la + t * da, lk + t * dk);
            let g = res.eval(na.exp(), nk.exp());
            let gn = norm(g);
            if gn.is_finite() && gn < current {
                la = na;
                lk = nk;
                f = g;
                best = best.min(gn);
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            return Err(best);
        }
    }
    if norm(f) <= opts.tol {
        Ok((la, lk, f.0, f.1, opts.max_iter))
    } else {
        Err(best)
    }
}

/// Solves the system along an ascending λ grid, warm-starting each solve at
/// the previous solution. Failures are flagged and the sweep continues.
pub fn alpha_curve(
    base: &BaseLoss,
    noise: &NoiseModel,
    gamma: f64,
    grid: &LambdaGrid,
) -> Result<Vec<CurvePoint>> {
    alpha_curve_with(base, noise, gamma, grid, &SystemOptions::default())
}

pub fn alpha_curve_with(
    base: &BaseLoss,
    noise: &NoiseModel,
    gamma: f64,
    grid: &LambdaGrid,
    opts: &SystemOptions,
) -> Result<Vec<CurvePoint>> {
    let mut init = None;
    let mut out = Vec::with_capacity(grid.len());
    for &lambda in grid.points() {
        let loss = base.scaled(lambda)?;
        match solve_system_with(&loss, noise, gamma, init, opts) {
            Ok(sol) => {
                init = Some((sol.alpha, sol.kappa));
                out.push(CurvePoint {
                    lambda,
                    alpha_sq: sol.alpha_sq(),
                    kappa: sol.kappa,
                    residual: sol.residual_norm,
                    converged: true,
                });
            }
            Err(Error::NoConvergence { best_residual }) => out.push(CurvePoint {
                lambda,
                alpha_sq: f64::NAN,
                kappa: f64::NAN,
                residual: best_residual,
                converged: false,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

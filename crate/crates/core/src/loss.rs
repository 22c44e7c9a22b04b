//! Robust losses and their λ-scaled family.
//!
//! A base loss ρ is convex with `argmin ρ = {0}`, a bounded derivative ψ and
//! `‖ψ‖_Lip = 1`. The scaled loss is `ρ_λ(x) = λ² ρ(x/λ)`, with
//! `ψ_λ(x) = λ ψ(x/λ)` and `ψ_λ'(x) = ψ'(x/λ)`. Scaling keeps the Lipschitz
//! constant of ψ at one and multiplies its sup-norm by λ.
//!
//! At the Huber kinks `|x| = λ` the derivative ψ' is reported as 1, i.e. the
//! boundary counts as an inlier.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};

const PROX_MAX_ITER: usize = 200;
const PROX_TOL: f64 = 1e-12;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A user supplied loss given by its (ρ, ψ, ψ') triple.
///
/// The caller declares `‖ψ‖_∞` and the curvature constant η; construction
/// checks the remaining shape conditions on a sample grid.
#[derive(Clone)]
pub struct CustomLoss {
    name: String,
    rho: ScalarFn,
    psi: ScalarFn,
    psi_prime: ScalarFn,
    psi_sup: f64,
    eta: f64,
}

impl CustomLoss {
    pub fn new<R, P, D>(
        name: impl Into<String>,
        rho: R,
        psi: P,
        psi_prime: D,
        psi_sup: f64,
        eta: f64,
    ) -> Result<Self>
    where
        R: Fn(f64) -> f64 + Send + Sync + 'static,
        P: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(psi_sup.is_finite() && psi_sup > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "custom loss needs a finite positive sup-norm of psi, got {psi_sup}"
            )));
        }
        if !(eta > 0.0 && eta <= 2.0) {
            return Err(Error::InvalidParameter(format!(
                "custom loss eta must lie in (0, 2], got {eta}"
            )));
        }
        let loss = Self {
            name: name.into(),
            rho: Arc::new(rho),
            psi: Arc::new(psi),
            psi_prime: Arc::new(psi_prime),
            psi_sup,
            eta,
        };
        loss.validate()?;
        Ok(loss)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(format!("{}: {msg}", self.name)));
        if (self.rho)(0.0).abs() > 1e-12 || (self.psi)(0.0).abs() > 1e-12 {
            return bad("rho and psi must vanish at the origin".into());
        }
        // Sample grid dense near the origin, geometric in the tails.
        let mut grid: Vec<f64> = (-400..=400).map(|k| k as f64 * 0.01).collect();
        grid.extend((1..=60).flat_map(|k| {
            let v = 4.0 * 1.2f64.powi(k);
            [v, -v]
        }));
        grid.sort_by(|a, b| a.total_cmp(b));
        for w in grid.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (pa, pb) = ((self.psi)(a), (self.psi)(b));
            if pb < pa - 1e-12 {
                return bad(format!("psi is not monotone between {a} and {b}"));
            }
            if (pb - pa).abs() > (1.0 + 1e-9) * (b - a) {
                return bad(format!("psi is not 1-Lipschitz between {a} and {b}"));
            }
        }
        for &x in &grid {
            let p = (self.psi)(x);
            if p.abs() > self.psi_sup * (1.0 + 1e-9) {
                return bad(format!("|psi({x})| exceeds the declared sup-norm"));
            }
            if x != 0.0 && (self.rho)(x) <= 0.0 {
                return bad(format!("rho({x}) must be positive away from the origin"));
            }
            let dp = (self.psi_prime)(x);
            if !(-1e-12..=1.0 + 1e-9).contains(&dp) {
                return bad(format!("psi'({x}) = {dp} outside [0, 1]"));
            }
            if p * p / (self.psi_sup * self.psi_sup) + dp < self.eta - 1e-9 {
                return bad(format!("curvature condition fails at {x}"));
            }
        }
        Ok(())
    }
}

impl fmt::Debug for CustomLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomLoss")
            .field("name", &self.name)
            .field("psi_sup", &self.psi_sup)
            .field("eta", &self.eta)
            .finish()
    }
}

/// An unscaled robust loss ρ.
#[derive(Clone, Debug)]
pub enum BaseLoss {
    /// `ρ(x) = ∫_0^{|x|} min(1, u) du`.
    Huber,
    /// `ρ(x) = √(1 + x²) − 1`.
    PseudoHuber,
    Custom(Arc<CustomLoss>),
}

impl BaseLoss {
    pub fn name(&self) -> &str {
        match self {
            BaseLoss::Huber => "huber",
            BaseLoss::PseudoHuber => "pseudo_huber",
            BaseLoss::Custom(c) => &c.name,
        }
    }

    pub fn rho(&self, u: f64) -> f64 {
        match self {
            BaseLoss::Huber => {
                let a = u.abs();
                if a <= 1.0 {
                    0.5 * u * u
                } else {
                    a - 0.5
                }
            }
            // √(1+u²) − 1 written without cancellation near zero.
            BaseLoss::PseudoHuber => u * u / ((1.0 + u * u).sqrt() + 1.0),
            BaseLoss::Custom(c) => (c.rho)(u),
        }
    }

    pub fn psi(&self, u: f64) -> f64 {
        match self {
            BaseLoss::Huber => u.clamp(-1.0, 1.0),
            BaseLoss::PseudoHuber => u / (1.0 + u * u).sqrt(),
            BaseLoss::Custom(c) => (c.psi)(u),
        }
    }

    pub fn psi_prime(&self, u: f64) -> f64 {
        match self {
            BaseLoss::Huber => {
                if u.abs() <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            BaseLoss::PseudoHuber => {
                let s = 1.0 + u * u;
                1.0 / (s * s.sqrt())
            }
            BaseLoss::Custom(c) => (c.psi_prime)(u),
        }
    }

    /// `‖ψ‖_∞` of the unscaled loss.
    pub fn psi_sup(&self) -> f64 {
        match self {
            BaseLoss::Huber | BaseLoss::PseudoHuber => 1.0,
            BaseLoss::Custom(c) => c.psi_sup,
        }
    }

    /// Constant η with `ψ²/‖ψ‖_∞² + ψ' ≥ η` almost everywhere.
    ///
    /// For pseudo-Huber, with s = 1 + x², the left side is
    /// `1 − 1/s + s^{-3/2}`, minimised at s = 9/4 with value 23/27.
    pub fn eta(&self) -> f64 {
        match self {
            BaseLoss::Huber => 1.0,
            BaseLoss::PseudoHuber => 23.0 / 27.0,
            BaseLoss::Custom(c) => c.eta,
        }
    }

    /// True when ψ' is piecewise constant with values in {0, 1}.
    pub fn is_huber(&self) -> bool {
        matches!(self, BaseLoss::Huber)
    }

    pub fn scaled(&self, lambda: f64) -> Result<ScaledLoss> {
        ScaledLoss::new(self.clone(), lambda)
    }
}

impl FromStr for BaseLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "huber" => Ok(BaseLoss::Huber),
            "pseudo_huber" | "pseudo-huber" | "pseudohuber" => Ok(BaseLoss::PseudoHuber),
            other => Err(Error::InvalidParameter(format!("unknown loss '{other}'"))),
        }
    }
}

impl fmt::Display for BaseLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A scaled loss and its first two derivatives at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossEval {
    pub rho: f64,
    pub psi: f64,
    pub psi_prime: f64,
}

/// The loss `ρ_λ(x) = λ² ρ(x/λ)`.
#[derive(Clone, Debug)]
pub struct ScaledLoss {
    base: BaseLoss,
    lambda: f64,
}

impl ScaledLoss {
    pub fn new(base: BaseLoss, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "loss scale lambda must be positive and finite, got {lambda}"
            )));
        }
        Ok(Self { base, lambda })
    }

    pub fn huber(lambda: f64) -> Result<Self> {
        Self::new(BaseLoss::Huber, lambda)
    }

    pub fn pseudo_huber(lambda: f64) -> Result<Self> {
        Self::new(BaseLoss::PseudoHuber, lambda)
    }

    pub fn base(&self) -> &BaseLoss {
        &self.base
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    #[inline]
    pub fn rho(&self, x: f64) -> f64 {
        let l = self.lambda;
        l * l * self.base.rho(x / l)
    }

    #[inline]
    pub fn psi(&self, x: f64) -> f64 {
        self.lambda * self.base.psi(x / self.lambda)
    }

    #[inline]
    pub fn psi_prime(&self, x: f64) -> f64 {
        self.base.psi_prime(x / self.lambda)
    }

    pub fn eval(&self, x: f64) -> LossEval {
        LossEval {
            rho: self.rho(x),
            psi: self.psi(x),
            psi_prime: self.psi_prime(x),
        }
    }

    /// `‖ψ_λ‖_∞ = λ ‖ψ‖_∞`.
    pub fn psi_sup(&self) -> f64 {
        self.lambda * self.base.psi_sup()
    }

    pub fn eta(&self) -> f64 {
        self.base.eta()
    }

    /// Whether `x` lies in the Huber inlier band `|x| ≤ λ`.
    #[inline]
    pub fn is_inlier(&self, x: f64) -> bool {
        x.abs() <= self.lambda
    }

    /// `prox[κ ρ_λ](x) = argmin_u (x − u)²/2 + κ ρ_λ(u)`.
    pub fn prox(&self, kappa: f64, x: f64) -> Result<f64> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "prox parameter kappa must be positive, got {kappa}"
            )));
        }
        match self.base {
            BaseLoss::Huber => Ok(x - self.huber_prox_residual(kappa, x)),
            _ => self.prox_newton(kappa, x),
        }
    }

    /// `x − prox[κ ρ_λ](x)`, which equals `κ ψ_λ(prox(x))`.
    pub fn prox_residual(&self, kappa: f64, x: f64) -> Result<f64> {
        match self.base {
            BaseLoss::Huber => Ok(self.huber_prox_residual(kappa, x)),
            _ => Ok(x - self.prox_newton(kappa, x)?),
        }
    }

    /// Closed form `κ λ ζ(x / (λ(1+κ)))` with ζ the clamp to [−1, 1].
    #[inline]
    pub(crate) fn huber_prox_residual(&self, kappa: f64, x: f64) -> f64 {
        let l = self.lambda;
        kappa * l * (x / (l * (1.0 + kappa))).clamp(-1.0, 1.0)
    }

    /// Safeguarded Newton on `g(u) = u + κ ψ_λ(u) − x`, which is increasing with
    /// slope in [1, 1 + κ]. The root lies between 0 and x and within
    /// `κ ‖ψ_λ‖_∞` of x.
    fn prox_newton(&self, kappa: f64, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Ok(0.0);
        }
        let reach = kappa * self.psi_sup();
        let (mut lo, mut hi) = if x > 0.0 {
            ((x - reach).max(0.0), x)
        } else {
            (x, (x + reach).min(0.0))
        };
        let tol = PROX_TOL * x.abs().max(1.0);
        let g = |u: f64| u + kappa * self.psi(u) - x;
        let mut u = (x / (1.0 + kappa * self.psi_prime(0.0))).clamp(lo, hi);
        for _ in 0..PROX_MAX_ITER {
            let gu = g(u);
            if gu.abs() <= tol {
                return Ok(u);
            }
            if gu > 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            if hi - lo <= tol {
                return Ok(0.5 * (lo + hi));
            }
            let slope = 1.0 + kappa * self.psi_prime(u);
            let next = u - gu / slope;
            u = if next > lo && next < hi {
                next
            } else {
                0.5 * (lo + hi)
            };
        }
        Err(Error::Numerical(format!(
            "prox Newton iteration did not converge for x = {x}, kappa = {kappa}, lambda = {}",
            self.lambda
        )))
    }
}

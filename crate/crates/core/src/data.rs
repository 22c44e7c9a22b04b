use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Observations `y = Xβ⋆ + ε` for a linear model with `n > p ≥ 1`.
///
/// `beta_star` and `sigma` are only known for synthetic data; `sigma` defaults
/// to the identity.
#[derive(Clone, Debug)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    beta_star: Option<DVector<f64>>,
    sigma: Option<DMatrix<f64>>,
    rank: OnceLock<std::result::Result<(), String>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if p == 0 {
            return Err(Error::InvalidParameter("design has no columns".into()));
        }
        if n <= p {
            return Err(Error::InvalidParameter(format!(
                "need more observations than features (n = {n}, p = {p})"
            )));
        }
        if y.len() != n {
            return Err(Error::InvalidParameter(format!(
                "response has length {} but design has {n} rows",
                y.len()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "data contains non-finite values".into(),
            ));
        }
        Ok(Self {
            x,
            y,
            beta_star: None,
            sigma: None,
            rank: OnceLock::new(),
        })
    }

    pub fn with_beta_star(mut self, beta_star: DVector<f64>) -> Result<Self> {
        if beta_star.len() != self.p() {
            return Err(Error::InvalidParameter(format!(
                "beta_star has length {} but p = {}",
                beta_star.len(),
                self.p()
            )));
        }
        self.beta_star = Some(beta_star);
        Ok(self)
    }

    pub fn with_sigma(mut self, sigma: DMatrix<f64>) -> Result<Self> {
        let p = self.p();
        if sigma.shape() != (p, p) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be {p}x{p}, got {:?}",
                sigma.shape()
            )));
        }
        if (&sigma - sigma.transpose()).amax() > 1e-10 * sigma.amax().max(1.0) {
            return Err(Error::InvalidParameter("sigma must be symmetric".into()));
        }
        self.sigma = Some(sigma);
        Ok(self)
    }

    /// Same design with a different response. Known truth is dropped.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        let mut d = Self::new(self.x.clone(), y)?;
        d.rank = self.rank.clone();
        Ok(d)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Aspect ratio `p / n`.
    pub fn gamma(&self) -> f64 {
        self.p() as f64 / self.n() as f64
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn beta_star(&self) -> Option<&DVector<f64>> {
        self.beta_star.as_ref()
    }

    pub fn sigma(&self) -> Option<&DMatrix<f64>> {
        self.sigma.as_ref()
    }

    /// Checks that X has full column rank. The result is cached.
    pub fn ensure_full_rank(&self) -> Result<()> {
        self.rank
            .get_or_init(|| {
                let gram = linalg::weighted_gram(&self.x, &vec![1.0; self.n()]);
                match linalg::shifted_cholesky(&gram, 0.0) {
                    Some(_) => Ok(()),
                    None => Err(format!(
                        "XᵀX is singular or ill-conditioned (n = {}, p = {})",
                        self.n(),
                        self.p()
                    )),
                }
            })
            .clone()
            .map_err(Error::RankDeficient)
    }
}

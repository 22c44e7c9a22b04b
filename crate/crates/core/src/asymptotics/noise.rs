//! Noise distributions and their discrete representations.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Default number of representative points for continuous noise.
pub const DEFAULT_NODES: usize = 4001;

const MC_SAMPLES: usize = 1_000_000;
const ATOM_TAIL_MASS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum NoiseKind {
    /// Student t with the given degrees of freedom.
    StudentT(f64),
    /// Centred Gaussian with standard deviation σ. σ = 0 is a point mass.
    Gaussian(f64),
    /// Centred Cauchy with the given scale.
    Cauchy(f64),
    /// Sum of independent standard Gaussian and standard Cauchy.
    GaussianPlusCauchy,
    /// σ · t(df).
    ScaledStudentT { sigma: f64, df: f64 },
    /// scale · ⌊T⌋ with T ~ t(df).
    DiscreteCeilT { scale: f64, df: f64 },
    /// Sum of independent draws from each component.
    Convolution(Vec<NoiseKind>),
}

impl NoiseKind {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidParameter(format!(
                "noise {what} must be positive, got {v}"
            )))
        };
        match self {
            NoiseKind::StudentT(df) if !(*df > 0.0 && df.is_finite()) => bad("df", *df),
            NoiseKind::Gaussian(s) if !(*s >= 0.0 && s.is_finite()) => bad("sigma", *s),
            NoiseKind::Cauchy(s) if !(*s > 0.0 && s.is_finite()) => bad("scale", *s),
            NoiseKind::ScaledStudentT { sigma, df }
            | NoiseKind::DiscreteCeilT { scale: sigma, df } => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    bad("scale", *sigma)
                } else if !(*df > 0.0 && df.is_finite()) {
                    bad("df", *df)
                } else {
                    Ok(())
                }
            }
            NoiseKind::Convolution(parts) => {
                if parts.is_empty() {
                    return Err(Error::InvalidParameter("empty noise convolution".into()));
                }
                parts.iter().try_for_each(|p| p.validate())
            }
            _ => Ok(()),
        }
    }

    /// Quantile function when it is available in closed form or from a
    /// one-dimensional CDF inversion.
    pub fn quantile(&self, u: f64) -> Option<f64> {
        match self {
            NoiseKind::StudentT(df) => Some(t_quantile(*df, u)),
            NoiseKind::Gaussian(s) => Some(if *s == 0.0 {
                0.0
            } else {
                s * normal_quantile(u)
            }),
            NoiseKind::Cauchy(s) => Some(s * (PI * (u - 0.5)).tan()),
            NoiseKind::ScaledStudentT { sigma, df } => Some(sigma * t_quantile(*df, u)),
            NoiseKind::Convolution(parts) if parts.len() == 1 => parts[0].quantile(u),
            _ => None,
        }
    }

    /// One draw using `rng`. Continuous t variables are drawn by inverse CDF.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseKind::StudentT(df) => t_quantile(*df, open_unit(rng)),
            NoiseKind::Gaussian(s) => {
                let z: f64 = rng.sample(StandardNormal);
                s * z
            }
            NoiseKind::Cauchy(s) => s * (PI * (open_unit(rng) - 0.5)).tan(),
            NoiseKind::GaussianPlusCauchy => {
                let z: f64 = rng.sample(StandardNormal);
                z + (PI * (open_unit(rng) - 0.5)).tan()
            }
            NoiseKind::ScaledStudentT { sigma, df } => sigma * t_quantile(*df, open_unit(rng)),
            NoiseKind::DiscreteCeilT { scale, df } => {
                scale * t_quantile(*df, open_unit(rng)).floor()
            }
            NoiseKind::Convolution(parts) => parts.iter().map(|p| p.sample(rng)).sum(),
        }
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("gauss+cauchy") {
            return Ok(NoiseKind::GaussianPlusCauchy);
        }
        if s.contains('+') {
            let parts = s.split('+').map(str::parse).collect::<Result<Vec<_>>>()?;
            let kind = NoiseKind::Convolution(parts);
            kind.validate()?;
            return Ok(kind);
        }
        let mut fields = s.split(':');
        let head = fields.next().unwrap_or("").to_ascii_lowercase();
        let nums = fields
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| {
                    Error::InvalidParameter(format!("bad number '{f}' in noise spec '{s}'"))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let arity = |k: usize| -> Result<()> {
            if nums.len() == k {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "noise spec '{s}' expects {k} parameter(s)"
                )))
            }
        };
        let kind = match head.as_str() {
            "t" => {
                arity(1)?;
                NoiseKind::StudentT(nums[0])
            }
            "gauss" | "gaussian" | "normal" => match nums.len() {
                0 => NoiseKind::Gaussian(1.0),
                _ => {
                    arity(1)?;
                    NoiseKind::Gaussian(nums[0])
                }
            },
            "cauchy" => match nums.len() {
                0 => NoiseKind::Cauchy(1.0),
                _ => {
                    arity(1)?;
                    NoiseKind::Cauchy(nums[0])
                }
            },
            "scaled-t" => {
                arity(2)?;
                NoiseKind::ScaledStudentT {
                    sigma: nums[0],
                    df: nums[1],
                }
            }
            "ceil-t" => {
                arity(2)?;
                NoiseKind::DiscreteCeilT {
                    scale: nums[0],
                    df: nums[1],
                }
            }
            _ => return Err(Error::InvalidParameter(format!("unknown noise spec '{s}'"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseKind::StudentT(df) => write!(f, "t:{df}"),
            NoiseKind::Gaussian(s) => write!(f, "gauss:{s}"),
            NoiseKind::Cauchy(s) => write!(f, "cauchy:{s}"),
            NoiseKind::GaussianPlusCauchy => write!(f, "gauss+cauchy"),
            NoiseKind::ScaledStudentT { sigma, df } => write!(f, "scaled-t:{sigma}:{df}"),
            NoiseKind::DiscreteCeilT { scale, df } => write!(f, "ceil-t:{scale}:{df}"),
            NoiseKind::Convolution(parts) => {
                let s: Vec<String> = parts.iter().map(|p| p.to_string()).collect();
                write!(f, "{}", s.join("+"))
            }
        }
    }
}

impl TryFrom<String> for NoiseKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<NoiseKind> for String {
    fn from(k: NoiseKind) -> String {
        k.to_string()
    }
}

impl NoiseKind {
    /// The law of `factor · W`.
    pub fn scaled(&self, factor: f64) -> NoiseKind {
        match self {
            NoiseKind::StudentT(df) => NoiseKind::ScaledStudentT {
                sigma: factor,
                df: *df,
            },
            NoiseKind::Gaussian(s) => NoiseKind::Gaussian(factor * s),
            NoiseKind::Cauchy(s) => NoiseKind::Cauchy(factor * s),
            NoiseKind::GaussianPlusCauchy => {
                NoiseKind::Convolution(vec![NoiseKind::Gaussian(factor), NoiseKind::Cauchy(factor)])
            }
            NoiseKind::ScaledStudentT { sigma, df } => NoiseKind::ScaledStudentT {
                sigma: factor * sigma,
                df: *df,
            },
            NoiseKind::DiscreteCeilT { scale, df } => NoiseKind::DiscreteCeilT {
                scale: factor * scale,
                df: *df,
            },
            NoiseKind::Convolution(parts) => {
                NoiseKind::Convolution(parts.iter().map(|p| p.scaled(factor)).collect())
            }
        }
    }
}

/// A noise distribution together with a finite set of weighted nodes that
/// stands in for it inside expectations.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    kind: NoiseKind,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    grid_size: usize,
    seed: u64,
}

impl NoiseModel {
    /// Builds the node set with the default grid size and seed 0.
    pub fn new(kind: NoiseKind) -> Result<Self> {
        Self::with_grid(kind, DEFAULT_NODES, 0)
    }

    /// Continuous noise gets `grid_size` equal-probability nodes at the
    /// midpoint quantiles `(k + ½)/M`. Quantiles come from the analytic
    /// quantile function when available and from `seed`-driven Monte Carlo
    /// otherwise. Discrete noise is represented by its atoms.
    pub fn with_grid(kind: NoiseKind, grid_size: usize, seed: u64) -> Result<Self> {
        kind.validate()?;
        if grid_size == 0 {
            return Err(Error::InvalidParameter("grid size must be positive".into()));
        }
        let (nodes, weights) = if let NoiseKind::DiscreteCeilT { scale, df } = kind {
            floor_t_atoms(scale, df)
        } else if kind.quantile(0.5).is_some() {
            let nodes = (0..grid_size)
                .map(|k| kind.quantile((k as f64 + 0.5) / grid_size as f64).unwrap())
                .collect();
            (nodes, vec![1.0 / grid_size as f64; grid_size])
        } else {
            monte_carlo_nodes(&kind, grid_size, seed)
        };
        Ok(Self {
            kind,
            nodes,
            weights,
            grid_size,
            seed,
        })
    }

    pub fn kind(&self) -> &NoiseKind {
        &self.kind
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `E[f(W)]` under the node representation.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&w, &p)| p * f(w))
            .sum()
    }

    /// Weighted quantile of the node representation.
    pub fn node_quantile(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for (&w, &p) in self.nodes.iter().zip(&self.weights) {
            acc += p;
            if acc >= u {
                return w;
            }
        }
        *self.nodes.last().unwrap()
    }

    /// Robust scale estimate `IQR / 1.349`, or 1 when the IQR vanishes.
    pub fn iqr_scale(&self) -> f64 {
        let iqr = self.node_quantile(0.75) - self.node_quantile(0.25);
        if iqr > 0.0 {
            iqr / 1.349
        } else {
            1.0
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.kind.sample(rng)
    }
}

fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

fn normal_quantile(u: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(u)
}

/// Quantile of the Student t distribution. Closed forms for df ∈ {1, 2, 4}.
pub fn t_quantile(df: f64, u: f64) -> f64 {
    if df == 1.0 {
        (PI * (u - 0.5)).tan()
    } else if df == 2.0 {
        (2.0 * u - 1.0) / (2.0 * u * (1.0 - u)).sqrt()
    } else if df == 4.0 {
        let a = 4.0 * u * (1.0 - u);
        let q = ((a.sqrt()).acos() / 3.0).cos() / a.sqrt();
        (u - 0.5).signum() * 2.0 * (q - 1.0).max(0.0).sqrt()
    } else {
        StudentsT::new(0.0, 1.0, df).unwrap().inverse_cdf(u)
    }
}

fn t_cdf(df: f64, x: f64) -> f64 {
    if df == 2.0 {
        0.5 + x / (2.0 * (2.0 + x * x).sqrt())
    } else {
        StudentsT::new(0.0, 1.0, df).unwrap().cdf(x)
    }
}

/// Atoms `scale·k` with mass `P(⌊T⌋ = k)`, truncated once the remaining
/// mass on each side falls below half the tail budget. Truncated mass is
/// folded into the extreme atoms.
fn floor_t_atoms(scale: f64, df: f64) -> (Vec<f64>, Vec<f64>) {
    let half = 0.5 * ATOM_TAIL_MASS;
    let mut lo = -1i64;
    while t_cdf(df, lo as f64) > half {
        lo *= 2;
    }
    let mut hi = 1i64;
    while 1.0 - t_cdf(df, hi as f64) > half {
        hi *= 2;
    }
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for k in lo..hi {
        let w = t_cdf(df, (k + 1) as f64) - t_cdf(df, k as f64);
        if w > 0.0 {
            nodes.push(scale * k as f64);
            weights.push(w);
        }
    }
    weights[0] += t_cdf(df, lo as f64);
    *weights.last_mut().unwrap() += 1.0 - t_cdf(df, hi as f64);
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (nodes, weights)
}

fn monte_carlo_nodes(kind: &NoiseKind, grid_size: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = MC_SAMPLES.max(50 * grid_size);
    let mut draws: Vec<f64> = (0..count).map(|_| kind.sample(&mut rng)).collect();
    draws.sort_by(f64::total_cmp);
    let nodes = (0..grid_size)
        .map(|k| {
            let pos = ((k as f64 + 0.5) / grid_size as f64 * count as f64) as usize;
            draws[pos.min(count - 1)]
        })
        .collect();
    (nodes, vec![1.0 / grid_size as f64; grid_size])
}

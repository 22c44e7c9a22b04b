//! Synthetic data from the linear model `y = Xβ⋆ + ε`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::asymptotics::NoiseKind;
use crate::data::Dataset;
use crate::error::{Error, Result};

const DESIGN_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const SIGNAL_STREAM: u64 = 3;

/// Distribution of the i.i.d. design entries, each normalised to unit variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Design {
    Gaussian,
    Rademacher,
    /// √3 · U[−1, 1].
    Uniform,
    /// t(df) / √(df/(df−2)), df > 2.
    StudentT(f64),
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "gaussian" | "gauss" | "normal" => Ok(Design::Gaussian),
            "rademacher" => Ok(Design::Rademacher),
            "uniform" => Ok(Design::Uniform),
            _ => {
                let df = lower
                    .strip_prefix("t:")
                    .and_then(|d| d.parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown design '{s}'")))?;
                if !(df > 2.0 && df.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "t design needs df > 2 for unit variance, got {df}"
                    )));
                }
                Ok(Design::StudentT(df))
            }
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Design::Gaussian => write!(f, "gaussian"),
            Design::Rademacher => write!(f, "rademacher"),
            Design::Uniform => write!(f, "uniform"),
            Design::StudentT(df) => write!(f, "t:{df}"),
        }
    }
}

impl TryFrom<String> for Design {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Design> for String {
    fn from(d: Design) -> String {
        d.to_string()
    }
}

/// How β⋆ is chosen.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalSpec {
    #[default]
    Zero,
    /// Every coordinate equal to the value.
    Constant(f64),
    /// Gaussian direction rescaled to the given Euclidean norm.
    Random(f64),
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub n: usize,
    pub p: usize,
    pub design: Design,
    pub signal: SignalSpec,
    pub noise: NoiseKind,
}

/// Per-repetition seed derived from a base seed with SplitMix64 mixing.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws a dataset. Each component has its own ChaCha stream of the seed.
pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    let x = design_matrix(spec.n, spec.p, spec.design, seed)?;
    let beta = signal(spec, seed)?;
    let mut rng = stream(seed, NOISE_STREAM);
    let eps = DVector::from_fn(spec.n, |_, _| spec.noise.sample(&mut rng));
    let y = &x * &beta + eps;
    Dataset::new(x, y)?.with_beta_star(beta)
}

/// Draws only the design matrix.
pub fn design_matrix(n: usize, p: usize, design: Design, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = stream(seed, DESIGN_STREAM);
    let x = match design {
        Design::Gaussian => DMatrix::from_fn(n, p, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        }),
        Design::Rademacher => {
            DMatrix::from_fn(n, p, |_, _| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        }
        Design::Uniform => {
            let s = 3f64.sqrt();
            DMatrix::from_fn(n, p, |_, _| s * rng.gen_range(-1.0..1.0))
        }
        Design::StudentT(df) => {
            let t =
                StudentT::new(df).map_err(|e| Error::InvalidParameter(format!("t design: {e}")))?;
            let norm = (df / (df - 2.0)).sqrt();
            DMatrix::from_fn(n, p, |_, _| t.sample(&mut rng) / norm)
        }
    };
    Ok(x)
}

fn signal(spec: &DatasetSpec, seed: u64) -> Result<DVector<f64>> {
    let p = spec.p;
    Ok(match &spec.signal {
        SignalSpec::Zero => DVector::zeros(p),
        SignalSpec::Constant(c) => DVector::from_element(p, *c),
        SignalSpec::Random(norm) => {
            let mut rng = stream(seed, SIGNAL_STREAM);
            let v = DVector::from_fn(p, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            });
            let len = v.norm();
            if len > 0.0 {
                v * (*norm / len)
            } else {
                v
            }
        }
        SignalSpec::Explicit(values) => {
            if values.len() != p {
                return Err(Error::InvalidParameter(format!(
                    "explicit beta_star has {} entries but p = {p}",
                    values.len()
                )));
            }
            DVector::from_vec(values.clone())
        }
    })
}

//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::generate::{Design, SignalSpec};
use crate::asymptotics::NoiseKind;
use crate::error::{Error, Result};
use crate::loss::BaseLoss;
use crate::tuner::LambdaGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// R and R̂ along a λ grid.
    RiskConsistency,
    /// λ̂ = argmin R̂ versus the oracle grid minimum, for a list of noise scales.
    AdaptiveTuning,
    /// Risk consistency repeated over several design distributions.
    Universality,
    /// Risk consistency at fixed n for several aspect ratios.
    GammaSweep,
    /// Risk consistency at fixed aspect ratio for several sample sizes.
    NSweep,
    /// Noise `δ + n^{-1/8} z` against `δ + z`.
    VanishingSmooth,
    /// Risk consistency under discrete noise.
    NonSmoothNoise,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::RiskConsistency => "risk_consistency",
            ExperimentKind::AdaptiveTuning => "adaptive_tuning",
            ExperimentKind::Universality => "universality",
            ExperimentKind::GammaSweep => "gamma_sweep",
            ExperimentKind::NSweep => "n_sweep",
            ExperimentKind::VanishingSmooth => "vanishing_smooth",
            ExperimentKind::NonSmoothNoise => "non_smooth_noise",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_noise")]
    pub noise: NoiseKind,
    #[serde(default = "default_design")]
    pub design: Design,
    #[serde(default = "default_loss")]
    pub loss: String,
    /// A single λ. Exactly one of `lambda`, `lambdas` and `grid` is required.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    pub repetitions: usize,
    pub seed: u64,
    pub output_path: PathBuf,
    #[serde(default)]
    pub beta_star: SignalSpec,
    /// Also solve the asymptotic system at every λ.
    #[serde(default)]
    pub alpha_curve: bool,
    /// Noise scales for adaptive tuning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub designs: Option<Vec<Design>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ns: Option<Vec<usize>>,
}

fn default_noise() -> NoiseKind {
    NoiseKind::StudentT(2.0)
}

fn default_design() -> Design {
    Design::Gaussian
}

fn default_loss() -> String {
    "huber".into()
}

/// Default noise scales for adaptive tuning: 9 points on [1, 3].
pub fn default_sigmas() -> Vec<f64> {
    (0..9).map(|i| 1.0 + 0.25 * i as f64).collect()
}

pub fn default_designs() -> Vec<Design> {
    vec![
        Design::Gaussian,
        Design::Rademacher,
        Design::Uniform,
        Design::StudentT(5.0),
    ]
}

pub fn default_gammas() -> Vec<f64> {
    vec![0.25, 0.5, 0.8, 0.95]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn base_loss(&self) -> Result<BaseLoss> {
        self.loss.parse()
    }

    pub fn lambda_grid(&self) -> Result<LambdaGrid> {
        match (&self.lambda, &self.lambdas, &self.grid) {
            (Some(l), None, None) => LambdaGrid::from_points(vec![*l]),
            (None, Some(ls), None) => LambdaGrid::from_points(ls.clone()),
            (None, None, Some(g)) => LambdaGrid::make_grid(g.min, g.max, g.points),
            _ => Err(Error::Config(
                "exactly one of `lambda`, `lambdas` or `grid` must be given".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.p >= self.n {
            return Err(Error::Config(format!(
                "need 0 < p < n, got n = {}, p = {}",
                self.n, self.p
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        self.base_loss()?;
        self.lambda_grid()?;
        self.noise.validate()?;
        if let Some(s) = &self.sigmas {
            if s.is_empty() || s.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::Config("sigmas must be positive".into()));
            }
        }
        if let Some(g) = &self.gammas {
            if g.is_empty() || g.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
                return Err(Error::Config("gammas must lie in (0, 1)".into()));
            }
            if g.iter()
                .any(|&v| ((v * self.n as f64).round() as usize) < 1)
            {
                return Err(Error::Config("every gamma must give p ≥ 1".into()));
            }
        }
        if let Some(ns) = &self.ns {
            let gamma = self.p as f64 / self.n as f64;
            if ns.is_empty()
                || ns
                    .iter()
                    .any(|&n| ((gamma * n as f64).round() as usize) < 1)
            {
                return Err(Error::Config("every n must give p ≥ 1".into()));
            }
        }
        if let Some(d) = &self.designs {
            if d.is_empty() {
                return Err(Error::Config("designs must not be empty".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
experiment = "risk_consistency"
n = 400
p = 120
noise = "t:2"
design = "gaussian"
loss = "huber"
repetitions = 5
seed = 7
output_path = "out.csv"

[grid]
min = 1.0
max = 10.0
points = 11
"#;

    #[test]
    fn parses_sample() {
        let c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.experiment, ExperimentKind::RiskConsistency);
        assert_eq!(c.lambda_grid().unwrap().len(), 11);
        assert_eq!(c.beta_star, SignalSpec::Zero);
        let again = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again.noise, c.noise);
    }

    #[test]
    fn rejects_invalid() {
        assert!(ExperimentConfig::from_toml(&SAMPLE.replace("p = 120", "p = 400")).is_err());
        assert!(
            ExperimentConfig::from_toml(&SAMPLE.replace("repetitions = 5", "repetitions = 0"))
                .is_err()
        );
        assert!(
            ExperimentConfig::from_toml(&SAMPLE.replace("seed = 7", "seed = 7\nlambda = 2.0"))
                .is_err()
        );
        assert!(ExperimentConfig::from_toml(&SAMPLE.replace("t:2", "t:0")).is_err());
        assert!(
            ExperimentConfig::from_toml(&SAMPLE.replace("seed = 7", "seed = 7\nbogus = 1"))
                .is_err()
        );
    }

    #[test]
    fn default_sigma_grid() {
        let s = default_sigmas();
        assert_eq!(s.len(), 9);
        assert_eq!(s[0], 1.0);
        assert_eq!(s[8], 3.0);
    }
}

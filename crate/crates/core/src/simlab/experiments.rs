//! Experiment runners. Each configuration expands into one or more scenarios
//! that share the per-repetition seeds.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::config::{
    default_designs, default_gammas, default_sigmas, ExperimentConfig, ExperimentKind,
};
use super::generate::{derive_seed, generate_dataset, DatasetSpec};
use super::record::{write_csv_atomic, ExperimentRecord};
use super::stats;
use crate::asymptotics::{alpha_curve, NoiseKind, NoiseModel};
use crate::error::Result;
use crate::loss::BaseLoss;
use crate::risk;
use crate::solver::FitOptions;
use crate::tuner::{self, LambdaGrid};

/// Sample sizes used by an n-sweep when none are configured.
pub const DEFAULT_NS: [usize; 2] = [500, 2000];

#[derive(Clone, Debug)]
pub struct Scenario {
    pub variant: String,
    pub spec: DatasetSpec,
    pub grid: LambdaGrid,
}

/// Expands a configuration into its scenarios.
pub fn scenarios(cfg: &ExperimentConfig) -> Result<Vec<Scenario>> {
    cfg.validate()?;
    let grid = cfg.lambda_grid()?;
    let base = DatasetSpec {
        n: cfg.n,
        p: cfg.p,
        design: cfg.design,
        signal: cfg.beta_star.clone(),
        noise: cfg.noise.clone(),
    };
    let one = |variant: String, spec: DatasetSpec| Scenario {
        variant,
        spec,
        grid: grid.clone(),
    };
    let out = match cfg.experiment {
        ExperimentKind::RiskConsistency | ExperimentKind::NonSmoothNoise => {
            vec![one(String::new(), base)]
        }
        ExperimentKind::AdaptiveTuning => cfg
            .sigmas
            .clone()
            .unwrap_or_else(default_sigmas)
            .into_iter()
            .map(|s| {
                let spec = DatasetSpec {
                    noise: cfg.noise.scaled(s),
                    ..base.clone()
                };
                one(format!("sigma={s}"), spec)
            })
            .collect(),
        ExperimentKind::Universality => cfg
            .designs
            .clone()
            .unwrap_or_else(default_designs)
            .into_iter()
            .map(|d| {
                one(
                    format!("design={d}"),
                    DatasetSpec {
                        design: d,
                        ..base.clone()
                    },
                )
            })
            .collect(),
        ExperimentKind::GammaSweep => cfg
            .gammas
            .clone()
            .unwrap_or_else(default_gammas)
            .into_iter()
            .map(|g| {
                let p = (g * cfg.n as f64).round() as usize;
                one(format!("gamma={g}"), DatasetSpec { p, ..base.clone() })
            })
            .collect(),
        ExperimentKind::NSweep => {
            let gamma = cfg.p as f64 / cfg.n as f64;
            cfg.ns
                .clone()
                .unwrap_or_else(|| DEFAULT_NS.to_vec())
                .into_iter()
                .map(|n| {
                    let p = (gamma * n as f64).round() as usize;
                    one(
                        format!("n={n}"),
                        DatasetSpec {
                            n,
                            p,
                            ..base.clone()
                        },
                    )
                })
                .collect()
        }
        ExperimentKind::VanishingSmooth => {
            let sigma_n = (cfg.n as f64).powf(-0.125);
            [("sigma_n", sigma_n), ("fixed", 1.0)]
                .into_iter()
                .map(|(label, s)| {
                    let noise =
                        NoiseKind::Convolution(vec![cfg.noise.clone(), NoiseKind::Gaussian(s)]);
                    one(
                        label.to_string(),
                        DatasetSpec {
                            noise,
                            ..base.clone()
                        },
                    )
                })
                .collect()
        }
    };
    Ok(out)
}

/// Runs every scenario and repetition without touching the filesystem.
/// Repetitions are evaluated concurrently. Output order is fixed by
/// (scenario, repetition, λ).
pub fn run_records(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    let base = cfg.base_loss()?;
    let opts = FitOptions::default();
    let mut records = Vec::new();
    for scn in scenarios(cfg)? {
        let alpha = if cfg.alpha_curve {
            Some(scenario_alpha(&scn, &base)?)
        } else {
            None
        };
        let per_rep: Vec<Vec<ExperimentRecord>> = (0..cfg.repetitions)
            .into_par_iter()
            .map(|rep| {
                run_rep(
                    &scn,
                    &base,
                    &opts,
                    derive_seed(cfg.seed, rep as u64),
                    rep,
                    alpha.as_deref(),
                )
            })
            .collect();
        records.extend(per_rep.into_iter().flatten());
    }
    Ok(records)
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub records: Vec<ExperimentRecord>,
    pub summary: Summary,
}

/// Runs the experiment and writes its CSV atomically to `output_path`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    run_experiment_to(cfg, &cfg.output_path)
}

pub fn run_experiment_to(cfg: &ExperimentConfig, path: &Path) -> Result<ExperimentOutput> {
    let records = run_records(cfg)?;
    write_csv_atomic(path, &records)?;
    let summary = summarize(cfg.experiment, &records);
    Ok(ExperimentOutput { records, summary })
}

fn scenario_alpha(scn: &Scenario, base: &BaseLoss) -> Result<Vec<f64>> {
    let noise = NoiseModel::new(scn.spec.noise.clone())?;
    let gamma = scn.spec.p as f64 / scn.spec.n as f64;
    Ok(alpha_curve(base, &noise, gamma, &scn.grid)?
        .into_iter()
        .map(|c| c.alpha_sq)
        .collect())
}

fn run_rep(
    scn: &Scenario,
    base: &BaseLoss,
    opts: &FitOptions,
    seed: u64,
    rep: usize,
    alpha: Option<&[f64]>,
) -> Vec<ExperimentRecord> {
    let k = scn.grid.len();
    let (n, p) = (scn.spec.n, scn.spec.p);
    let mut r = vec![f64::NAN; k];
    let mut ms = vec![0.0; k];
    let outcome = generate_dataset(&scn.spec, seed).and_then(|data| {
        let mut last = Instant::now();
        tuner::risk_path(&data, base, &scn.grid, opts, |i, fit| {
            if fit.converged {
                r[i] = risk::oracle_risk(fit, &data).unwrap_or(f64::NAN);
            }
            let now = Instant::now();
            ms[i] = (now - last).as_secs_f64() * 1e3;
            last = now;
        })
    });
    let rows = match outcome {
        Ok(rows) => Some(rows),
        Err(e) => {
            eprintln!("repetition {rep} ({}) failed: {e}", scn.variant);
            None
        }
    };
    (0..k)
        .map(|i| {
            let (r_hat, trace_v) = match &rows {
                Some(rows) if !rows[i].trace_v.is_nan() => (rows[i].r_hat, rows[i].trace_v),
                _ => (f64::NAN, f64::NAN),
            };
            ExperimentRecord {
                seed,
                rep_index: rep,
                n,
                p,
                gamma: p as f64 / n as f64,
                lambda: scn.grid.points()[i],
                r: r[i],
                r_hat,
                alpha_sq: alpha.map(|a| a[i]),
                trace_v,
                wall_time_ms: ms[i],
                variant: scn.variant.clone(),
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SummaryRow {
    pub variant: String,
    pub lambda: f64,
    /// Repetitions with a finite relative error.
    pub count: usize,
    pub median_rel_error: f64,
    pub iqr_rel_error: f64,
    pub median_r: f64,
    pub median_r_hat: f64,
}

/// Gap `(R(λ̂) − min R) / min R` of the R̂-selected λ per repetition.
#[derive(Clone, Debug)]
pub struct TuningSummary {
    pub variant: String,
    pub gaps: Vec<f64>,
    pub median_gap: f64,
    pub iqr_gap: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub tuning: Vec<TuningSummary>,
}

impl Summary {
    pub fn row(&self, variant: &str, lambda: f64) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && (r.lambda - lambda).abs() <= 1e-12 * lambda)
    }

    /// Median relative error pooled over every λ of a variant.
    pub fn pooled_median(records: &[ExperimentRecord], variant: &str) -> f64 {
        let errs: Vec<f64> = records
            .iter()
            .filter(|r| r.variant == variant)
            .map(ExperimentRecord::relative_error)
            .collect();
        stats::median(&errs)
    }
}

fn variants(records: &[ExperimentRecord]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in records {
        if !out.contains(&r.variant) {
            out.push(r.variant.clone());
        }
    }
    out
}

pub fn summarize(kind: ExperimentKind, records: &[ExperimentRecord]) -> Summary {
    let mut summary = Summary::default();
    for v in variants(records) {
        let sub: Vec<&ExperimentRecord> = records.iter().filter(|r| r.variant == v).collect();
        let mut lambdas: Vec<f64> = Vec::new();
        for r in &sub {
            if !lambdas.contains(&r.lambda) {
                lambdas.push(r.lambda);
            }
        }
        for l in lambdas {
            let at: Vec<&&ExperimentRecord> = sub.iter().filter(|r| r.lambda == l).collect();
            let errs: Vec<f64> = at.iter().map(|r| r.relative_error()).collect();
            let rs: Vec<f64> = at.iter().map(|r| r.r).collect();
            let rh: Vec<f64> = at.iter().map(|r| r.r_hat).collect();
            summary.rows.push(SummaryRow {
                variant: v.clone(),
                lambda: l,
                count: errs.iter().filter(|e| e.is_finite()).count(),
                median_rel_error: stats::median(&errs),
                iqr_rel_error: stats::iqr(&errs),
                median_r: stats::median(&rs),
                median_r_hat: stats::median(&rh),
            });
        }
        if kind == ExperimentKind::AdaptiveTuning {
            let gaps = tuning_gaps(&sub);
            summary.tuning.push(TuningSummary {
                variant: v.clone(),
                median_gap: stats::median(&gaps),
                iqr_gap: stats::iqr(&gaps),
                gaps,
            });
        }
    }
    summary
}

/// Per repetition, the relative excess oracle risk of the λ minimising R̂
/// (first index on ties) over the grid minimum of R.
pub fn tuning_gaps(records: &[&ExperimentRecord]) -> Vec<f64> {
    let mut reps: Vec<usize> = records.iter().map(|r| r.rep_index).collect();
    reps.sort_unstable();
    reps.dedup();
    reps.into_iter()
        .map(|rep| {
            let rows: Vec<&&ExperimentRecord> =
                records.iter().filter(|r| r.rep_index == rep).collect();
            let mut sel: Option<usize> = None;
            for (i, r) in rows.iter().enumerate() {
                if r.r_hat.is_finite() && sel.is_none_or(|s| r.r_hat < rows[s].r_hat) {
                    sel = Some(i);
                }
            }
            let min_r = rows
                .iter()
                .map(|r| r.r)
                .filter(|r| r.is_finite())
                .fold(f64::INFINITY, f64::min);
            match sel {
                Some(s) if min_r.is_finite() && min_r > 0.0 => (rows[s].r - min_r) / min_r,
                _ => f64::NAN,
            }
        })
        .collect()
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<20} {:>10} {:>6} {:>12} {:>12} {:>12} {:>12}",
            "variant", "lambda", "reps", "med|Rh/R-1|", "iqr", "med R", "med R_hat"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<20} {:>10.4} {:>6} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
                if r.variant.is_empty() {
                    "-"
                } else {
                    &r.variant
                },
                r.lambda,
                r.count,
                r.median_rel_error,
                r.iqr_rel_error,
                r.median_r,
                r.median_r_hat
            )?;
        }
        if !self.tuning.is_empty() {
            writeln!(f)?;
            writeln!(f, "{:<20} {:>14} {:>12}", "variant", "med tune gap", "iqr")?;
            for t in &self.tuning {
                writeln!(
                    f,
                    "{:<20} {:>14.4} {:>12.4}",
                    t.variant, t.median_gap, t.iqr_gap
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simlab::config::GridConfig;
    use crate::simlab::generate::{Design, SignalSpec};

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            experiment: kind,
            n: 120,
            p: 24,
            noise: NoiseKind::StudentT(2.0),
            design: Design::Gaussian,
            loss: "huber".into(),
            lambda: None,
            lambdas: None,
            grid: Some(GridConfig {
                min: 1.0,
                max: 4.0,
                points: 3,
            }),
            repetitions: 2,
            seed: 11,
            output_path: "unused.csv".into(),
            beta_star: SignalSpec::Zero,
            alpha_curve: false,
            sigmas: Some(vec![1.0, 2.0]),
            designs: None,
            gammas: Some(vec![0.1, 0.3]),
            ns: Some(vec![60, 120]),
        }
    }

    #[test]
    fn scenario_expansion() {
        let count = |k| scenarios(&small(k)).unwrap().len();
        assert_eq!(count(ExperimentKind::RiskConsistency), 1);
        assert_eq!(count(ExperimentKind::AdaptiveTuning), 2);
        assert_eq!(count(ExperimentKind::Universality), 4);
        assert_eq!(count(ExperimentKind::GammaSweep), 2);
        assert_eq!(count(ExperimentKind::NSweep), 2);
        assert_eq!(count(ExperimentKind::VanishingSmooth), 2);
        let ns = scenarios(&small(ExperimentKind::NSweep)).unwrap();
        assert_eq!((ns[0].spec.n, ns[0].spec.p), (60, 12));
    }

    #[test]
    fn records_cover_every_rep_and_lambda() {
        let cfg = small(ExperimentKind::AdaptiveTuning);
        let recs = run_records(&cfg).unwrap();
        assert_eq!(recs.len(), 2 * 2 * 3);
        assert!(recs.iter().all(|r| r.r.is_finite() && r.r >= 0.0));
        let s = summarize(cfg.experiment, &recs);
        assert_eq!(s.tuning.len(), 2);
        assert!(s.tuning.iter().all(|t| t.gaps.iter().all(|g| *g >= 0.0)));
        assert!(s.to_string().contains("sigma=2"));
    }

    #[test]
    fn gap_uses_first_minimum() {
        let mk = |lambda: f64, r: f64, r_hat: f64| ExperimentRecord {
            seed: 0,
            rep_index: 0,
            n: 10,
            p: 2,
            gamma: 0.2,
            lambda,
            r,
            r_hat,
            alpha_sq: None,
            trace_v: 1.0,
            wall_time_ms: 0.0,
            variant: String::new(),
        };
        let recs = [
            mk(1.0, 2.0, 1.0),
            mk(2.0, 1.0, 1.0),
            mk(3.0, 4.0, f64::INFINITY),
        ];
        let refs: Vec<&ExperimentRecord> = recs.iter().collect();
        assert_eq!(tuning_gaps(&refs), vec![1.0]);
    }
}

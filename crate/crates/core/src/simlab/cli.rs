//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage or input errors, 2 on numerical
//! failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

use super::config::ExperimentConfig;
use super::experiments::run_experiment_to;
use super::generate::{generate_dataset, DatasetSpec, Design, SignalSpec};
use crate::asymptotics::{alpha_curve, solve_system, NoiseKind, NoiseModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::BaseLoss;
use crate::risk;
use crate::solver::{self, FitOptions};
use crate::tuner::{self, LambdaGrid, DEFAULT_GRID_POINTS};

#[derive(Parser, Debug)]
#[command(
    name = "robust-risk",
    version,
    about = "Robust M-estimation with out-of-sample risk estimates"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the M-estimator on a dataset file and report R̂.
    Fit(FitArgs),
    /// Print R̂ and its ingredients as JSON.
    Risk(FitArgs),
    /// Select λ by minimising R̂ over a log-spaced grid.
    Tune(TuneArgs),
    /// Solve the asymptotic (α, κ) system and print JSON.
    System(SystemArgs),
    /// Asymptotic risk α²(λ) over a grid as CSV.
    Curve(CurveArgs),
    /// Run an experiment described by a TOML file.
    Simulate(SimulateArgs),
    /// Write a synthetic dataset file.
    Generate(GenerateArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Headerless CSV with the response in column 0.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "huber")]
    loss: String,
    #[arg(long)]
    lambda: f64,
    /// Ridge parameter. Omit for the unregularized estimator.
    #[arg(long)]
    mu: Option<f64>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long, default_value_t = 1.0)]
    lambda_min: f64,
    #[arg(long, default_value_t = 10.0)]
    lambda_max: f64,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    lambda_points: usize,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "huber")]
    loss: String,
    #[command(flatten)]
    grid: GridArgs,
    /// Write the per-λ table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fit grid points concurrently from cold starts.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args, Debug)]
struct SystemArgs {
    #[arg(long, default_value = "huber")]
    loss: String,
    #[arg(long)]
    lambda: f64,
    /// Noise law, e.g. t:2, gauss:1.0, gauss+cauchy, ceil-t:3:2, scaled-t:2:2.
    #[arg(long)]
    noise: String,
    #[arg(long)]
    gamma: f64,
}

#[derive(Args, Debug)]
struct CurveArgs {
    #[arg(long, default_value = "huber")]
    loss: String,
    #[arg(long)]
    noise: String,
    #[arg(long)]
    gamma: f64,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_path`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long, default_value = "t:2")]
    noise: String,
    #[arg(long, default_value = "gaussian")]
    design: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Regular output goes to `out`, diagnostics to standard error.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Fit(a) => cmd_fit(a, out),
        Command::Risk(a) => cmd_risk(a, out),
        Command::Tune(a) => cmd_tune(a, out),
        Command::System(a) => cmd_system(a, out),
        Command::Curve(a) => cmd_curve(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Generate(a) => cmd_generate(a, out),
    }
}

/// Reads a headerless CSV whose first column is the response.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut y = Vec::new();
    let mut xs = Vec::new();
    let mut width = None;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    Error::InvalidParameter(format!("line {}: '{f}' is not a number", line + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "line {}: need a response and at least one feature",
                line + 1
            )));
        }
        if *width.get_or_insert(vals.len()) != vals.len() {
            return Err(Error::InvalidParameter(format!(
                "line {}: ragged row",
                line + 1
            )));
        }
        y.push(vals[0]);
        xs.extend_from_slice(&vals[1..]);
    }
    let p = width.ok_or_else(|| Error::InvalidParameter("dataset file is empty".into()))? - 1;
    let n = y.len();
    Dataset::new(DMatrix::from_row_slice(n, p, &xs), DVector::from_vec(y))
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for i in 0..data.n() {
        let mut row = Vec::with_capacity(data.p() + 1);
        row.push(data.y()[i].to_string());
        row.extend(data.x().row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_fit(a: FitArgs, out: &mut dyn Write) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let base: BaseLoss = a.loss.parse()?;
    let loss = base.scaled(a.lambda)?;
    let opts = FitOptions::default();
    let fit = match a.mu {
        Some(mu) => {
            data.ensure_full_rank()?;
            solver::fit_ridge(&data, &loss, mu, &opts)?
        }
        None => solver::fit(&data, &loss, &opts)?,
    };
    writeln!(
        out,
        "n = {}, p = {}, loss = {}, lambda = {}",
        data.n(),
        data.p(),
        base,
        a.lambda
    )?;
    writeln!(
        out,
        "converged = {}, iterations = {}",
        fit.converged, fit.iterations
    )?;
    writeln!(out, "kkt_residual = {:.3e}", fit.kkt_residual)?;
    let shown: Vec<String> = fit
        .beta_hat
        .iter()
        .take(5)
        .map(|v| format!("{v:.6}"))
        .collect();
    writeln!(
        out,
        "beta_hat: norm = {:.6}, first = [{}]{}",
        fit.beta_hat.norm(),
        shown.join(", "),
        if data.p() > 5 { " ..." } else { "" }
    )?;
    if !fit.converged {
        return Err(Error::Numerical(format!(
            "solver stopped after {} iterations",
            fit.iterations
        )));
    }
    if fit.ridge_mu > 0.0 {
        let t = risk::trace_jacobian(&fit, &data, &loss)?;
        writeln!(out, "trace_v = {:.6} ({})", t.trace_v, t.method.as_str())?;
    } else {
        let est = risk::estimate_risk(&fit, &data, &loss)?;
        writeln!(
            out,
            "r_hat = {:.6}, trace_v = {:.6} ({}){}",
            est.r_hat,
            est.trace_v,
            est.trace_method.as_str(),
            if est.degenerate { ", degenerate" } else { "" }
        )?;
    }
    Ok(())
}

fn cmd_risk(a: FitArgs, out: &mut dyn Write) -> Result<()> {
    if a.mu.is_some() {
        return Err(Error::Unsupported(
            "risk is defined for unregularized fits only".into(),
        ));
    }
    let data = read_dataset(&a.data)?;
    let loss = a.loss.parse::<BaseLoss>()?.scaled(a.lambda)?;
    let fit = solver::fit(&data, &loss, &FitOptions::default())?;
    if !fit.converged {
        return Err(Error::Numerical("solver did not converge".into()));
    }
    let est = risk::estimate_risk(&fit, &data, &loss)?;
    let v = json!({
        "lambda": a.lambda,
        "r_hat": finite_or_null(est.r_hat),
        "psi_sq_norm": est.psi_sq_norm,
        "trace_v": est.trace_v,
        "trace_method": est.trace_method.as_str(),
        "degenerate": est.degenerate,
        "kkt_residual": fit.kkt_residual,
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&v).unwrap())?;
    Ok(())
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

fn grid_of(g: &GridArgs) -> Result<LambdaGrid> {
    LambdaGrid::make_grid(g.lambda_min, g.lambda_max, g.lambda_points)
}

fn cmd_tune(a: TuneArgs, out: &mut dyn Write) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let base: BaseLoss = a.loss.parse()?;
    let grid = grid_of(&a.grid)?;
    let opts = FitOptions::default();
    let report = if a.parallel {
        tuner::tune_parallel(&data, &base, &grid, &opts)?
    } else {
        tuner::tune(&data, &base, &grid, &opts)?
    };
    let write_table = |w: &mut dyn Write| -> Result<()> {
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record([
            "lambda",
            "r_hat",
            "trace_v",
            "psi_sq_norm",
            "kkt_residual",
            "degenerate",
        ])?;
        for r in &report.rows {
            cw.write_record(&[
                r.lambda.to_string(),
                r.r_hat.to_string(),
                r.trace_v.to_string(),
                r.psi_sq_norm.to_string(),
                r.kkt_residual.to_string(),
                r.degenerate.to_string(),
            ])?;
        }
        cw.flush()?;
        Ok(())
    };
    match &a.out {
        Some(path) => {
            let mut f = std::fs::File::create(path)?;
            write_table(&mut f)?;
        }
        None => write_table(out)?,
    }
    writeln!(out, "selected_lambda = {}", report.selected_lambda)?;
    Ok(())
}

fn cmd_system(a: SystemArgs, out: &mut dyn Write) -> Result<()> {
    let loss = a.loss.parse::<BaseLoss>()?.scaled(a.lambda)?;
    let noise = NoiseModel::new(a.noise.parse::<NoiseKind>()?)?;
    let sol = solve_system(&loss, &noise, a.gamma, None)?;
    let v = json!({
        "alpha": sol.alpha,
        "kappa": sol.kappa,
        "alpha_sq": sol.alpha_sq(),
        "residual": sol.residual_norm,
        "r1": sol.r1,
        "r2": sol.r2,
        "iterations": sol.iterations,
        "quadrature": sol.quadrature,
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&v).unwrap())?;
    Ok(())
}

fn cmd_curve(a: CurveArgs, out: &mut dyn Write) -> Result<()> {
    let base: BaseLoss = a.loss.parse()?;
    let noise = NoiseModel::new(a.noise.parse::<NoiseKind>()?)?;
    let grid = grid_of(&a.grid)?;
    if !(a.gamma > 0.0 && a.gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma must lie in (0, 1), got {}",
            a.gamma
        )));
    }
    let curve = alpha_curve(&base, &noise, a.gamma, &grid)?;
    let write_curve = |w: &mut dyn Write| -> Result<()> {
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(["lambda", "alpha_sq", "kappa", "residual"])?;
        for c in &curve {
            cw.write_record(&[
                c.lambda.to_string(),
                c.alpha_sq.to_string(),
                c.kappa.to_string(),
                c.residual.to_string(),
            ])?;
        }
        cw.flush()?;
        Ok(())
    };
    match &a.out {
        Some(path) => write_curve(&mut std::fs::File::create(path)?)?,
        None => write_curve(out)?,
    }
    let failed = curve.iter().filter(|c| !c.converged).count();
    if failed > 0 {
        eprintln!("warning: {failed} grid point(s) did not converge");
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(r) = a.reps {
        cfg.repetitions = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(p) = a.p {
        cfg.p = p;
    }
    if let Some(o) = a.out {
        cfg.output_path = o;
    }
    cfg.validate()?;
    let res = run_experiment_to(&cfg, &cfg.output_path)?;
    writeln!(
        out,
        "{}: {} rows written to {}",
        cfg.experiment.as_str(),
        res.records.len(),
        cfg.output_path.display()
    )?;
    write!(out, "{}", res.summary)?;
    Ok(())
}

fn cmd_generate(a: GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let spec = DatasetSpec {
        n: a.n,
        p: a.p,
        design: a.design.parse::<Design>()?,
        signal: SignalSpec::Zero,
        noise: a.noise.parse()?,
    };
    let data = generate_dataset(&spec, a.seed)?;
    write_dataset(&a.out, &data)?;
    writeln!(
        out,
        "wrote {} x {} dataset to {}",
        data.n(),
        data.p(),
        a.out.display()
    )?;
    Ok(())
}

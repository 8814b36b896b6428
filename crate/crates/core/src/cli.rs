//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::diagnostics::{
    decompose_means, pearson_residuals, residual_correlograms, weekwise_approximations, Correlogram,
    MeanDecomposition,
};
use crate::error::{Error, IoError};
use crate::hhh4::{fit, parameter_curves, to_mpar, FitOptions, HhhConfig, HhhFit, SurveillanceSeries};
use crate::io;
use crate::moments::{
    check_stationarity, linear_condition_numbers, resolve_method, summarize_moments, IterateOptions, MomentMethod,
    PeriodicMoments, StationarityReport, SummaryOptions,
};
use crate::simulate::simulate;

#[derive(Debug, Parser)]
#[command(name = "mpar", version, about = "Periodic autoregressive count models: simulate, moments, fit, diagnose")]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a path from a model spec
    Simulate(SimulateArgs),
    /// Periodically stationary moments of a model spec
    Moments(MomentsArgs),
    /// Fit the endemic-epidemic model to count data
    Fit(FitArgs),
    /// Residuals, correlograms and mean decomposition of a fit
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Model spec (JSON)
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of recorded steps
    #[arg(long)]
    pub length: usize,
    /// Discarded steps before recording (default 10 periods)
    #[arg(long)]
    pub burn_in: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MomentOpts {
    /// Convergence tolerance of the moment iteration
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    /// Largest covariance lag to report
    #[arg(long, default_value_t = 3)]
    pub d_max: usize,
    /// auto, iterate or linear
    #[arg(long, default_value = "auto")]
    pub method: MomentMethod,
}

impl MomentOpts {
    fn summary(&self) -> SummaryOptions {
        SummaryOptions {
            d_max: self.d_max,
            iterate: IterateOptions { tol: self.tol, max_iter: self.max_iter, ..Default::default() },
            method: self.method,
        }
    }
}

#[derive(Debug, Args)]
pub struct MomentsArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub moments: MomentOpts,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Counts in long format: time, unit, count
    #[arg(long)]
    pub data: PathBuf,
    /// Unit metadata: unit, population
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long, default_value_t = 52)]
    pub period: usize,
    /// Phase of the first time point
    #[arg(long, default_value_t = 0)]
    pub start_phase: usize,
    /// Model configuration (JSON); defaults to the bivariate seasonal model
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Gradient-norm tolerance of the optimizer
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Fix the lag decay instead of profiling it
    #[arg(long)]
    pub fixed_p: Option<f64>,
    /// Also compute stationary moments of the fitted model up to this lag
    #[arg(long)]
    pub d_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Previous fit report (fit.json); the model is refitted when absent
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Largest correlogram lag
    #[arg(long, default_value_t = 10)]
    pub d_max: usize,
}

#[derive(Serialize)]
struct MomentsReport<'a> {
    method: MomentMethod,
    stationarity: StationarityReport,
    condition_numbers: Option<Vec<f64>>,
    moments: &'a PeriodicMoments,
}

#[derive(Serialize)]
struct FitReport<'a> {
    units: &'a [String],
    fit: &'a HhhFit,
}

#[derive(Serialize)]
struct DiagnosticsReport<'a> {
    correlogram_bound: f64,
    conditional_within_bounds: f64,
    unconditional_within_bounds: f64,
    decomposition: &'a MeanDecomposition,
}

fn prepare_out(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir)
        .map_err(|source| IoError::File { path: dir.display().to_string(), source })?;
    Ok(())
}

fn load_data(args: &DataArgs) -> Result<(SurveillanceSeries, HhhConfig), Error> {
    let series = io::read_series(&args.data, args.meta.as_deref(), args.start_phase, args.period)?;
    let config = match &args.config {
        Some(p) => io::read_json(p)?,
        None => HhhConfig::default(),
    };
    Ok((series, config))
}

pub fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        // a second call in the same process keeps the existing pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Simulate(a) => run_simulate(&a),
        Command::Moments(a) => run_moments(&a),
        Command::Fit(a) => run_fit(&a),
        Command::Diagnose(a) => run_diagnose(&a),
    }
}

fn run_simulate(a: &SimulateArgs) -> Result<(), Error> {
    let spec = io::read_spec(&a.spec)?;
    prepare_out(&a.out)?;
    let sim = simulate(&spec, a.length, a.burn_in, a.seed, None)?;
    io::write_simulation(io::output_file(&a.out, "series.csv")?, &sim)?;
    info!("simulated {} steps of {} units (seed {}, burn-in {})", sim.len(), sim.units, sim.seed, sim.burn_in);
    Ok(())
}

fn moments_report(spec: &crate::MparSpec, opts: &MomentOpts, out: &Path) -> Result<PeriodicMoments, Error> {
    let stationarity = check_stationarity(spec)?;
    let method = resolve_method(spec, opts.method)?;
    let pm = summarize_moments(spec, &opts.summary())?;
    let condition_numbers = match method {
        MomentMethod::Linear => Some(linear_condition_numbers(spec)?),
        _ => None,
    };
    io::write_json(&out.join("moments.json"), &MomentsReport { method, stationarity, condition_numbers, moments: &pm })?;
    io::write_moment_summary(io::output_file(out, "moments.csv")?, &pm)?;
    io::write_covariances(io::output_file(out, "covariances.csv")?, &pm)?;
    Ok(pm)
}

fn run_moments(a: &MomentsArgs) -> Result<(), Error> {
    let spec = io::read_spec(&a.spec)?;
    prepare_out(&a.out)?;
    let pm = moments_report(&spec, &a.moments, &a.out)?;
    for s in 0..pm.period() {
        for g in 0..pm.units() {
            println!("phase {s} unit {g}: mu = {:.6}, sigma2 = {:.6}", pm.mu[s][g], pm.sigma2[s][g]);
        }
    }
    Ok(())
}

fn fit_options(tol: f64, max_iter: usize, fixed_p: Option<f64>) -> FitOptions {
    FitOptions { grad_tol: tol, max_iter, fixed_p, ..FitOptions::default() }
}

fn run_fit(a: &FitArgs) -> Result<(), Error> {
    let (series, config) = load_data(&a.data)?;
    prepare_out(&a.out)?;
    let f = fit(&series, &config, &fit_options(a.tol, a.max_iter, a.fixed_p))?;
    info!("fit: p = {:.4}, loglik = {:.3}, AIC = {:.3}, converged = {}", f.p_hat, f.loglik, f.aic, f.converged);
    io::write_json(&a.out.join("fit.json"), &FitReport { units: &series.unit_names, fit: &f })?;
    io::write_coefficients(io::output_file(&a.out, "coefficients.csv")?, &f)?;
    let spec = to_mpar(&f, &config, &series)?;
    io::write_json(&a.out.join("spec.json"), &spec)?;
    if f.converged {
        let curves = parameter_curves(&f, &config, &series)?;
        io::write_curves(io::output_file(&a.out, "curves.csv")?, &curves, &series.unit_names)?;
    }
    if let Some(d_max) = a.d_max {
        let opts = MomentOpts { tol: 1e-12, max_iter: 1000, d_max, method: MomentMethod::Auto };
        moments_report(&spec, &opts, &a.out)?;
    }
    println!("p_hat = {:.6}  loglik = {:.6}  AIC = {:.6}  converged = {}", f.p_hat, f.loglik, f.aic, f.converged);
    Ok(())
}

fn run_diagnose(a: &DiagnoseArgs) -> Result<(), Error> {
    let (series, config) = load_data(&a.data)?;
    prepare_out(&a.out)?;
    let f = match &a.fit {
        Some(p) => {
            let report: serde_json::Value = io::read_json(p)?;
            let inner = report.get("fit").cloned().unwrap_or(report);
            serde_json::from_value::<HhhFit>(inner).map_err(IoError::from)?
        }
        None => fit(&series, &config, &FitOptions::default())?,
    };
    let spec = to_mpar(&f, &config, &series)?;
    let pm = summarize_moments(&spec, &SummaryOptions { d_max: 1, ..Default::default() })?;
    let res = pearson_residuals(&f, &series, &pm)?;
    let cond = residual_correlograms(&res.conditional, a.d_max)?;
    let uncond = residual_correlograms(&res.unconditional, a.d_max)?;
    let dec = decompose_means(&spec, &pm)?;
    let weekwise = weekwise_approximations(&pm)?;
    let units = &series.unit_names;
    io::write_residuals(io::output_file(&a.out, "residuals.csv")?, &res, units)?;
    io::write_correlograms(
        io::output_file(&a.out, "correlograms.csv")?,
        &[("conditional", &cond), ("unconditional", &uncond)],
        units,
    )?;
    io::write_decomposition(io::output_file(&a.out, "decomposition.csv")?, &dec, units)?;
    io::write_weekwise(io::output_file(&a.out, "weekwise.csv")?, &weekwise, units)?;
    let within = |grid: &Vec<Vec<Correlogram>>| {
        let all: Vec<f64> = grid.iter().flatten().map(|c| c.fraction_within(1)).collect();
        all.iter().sum::<f64>() / all.len() as f64
    };
    let report = DiagnosticsReport {
        correlogram_bound: cond[0][0].bound,
        conditional_within_bounds: within(&cond),
        unconditional_within_bounds: within(&uncond),
        decomposition: &dec,
    };
    io::write_json(&a.out.join("diagnostics.json"), &report)?;
    println!(
        "conditional residual correlations within bounds: {:.1}%",
        100.0 * report.conditional_within_bounds
    );
    Ok(())
}

/// Machine-readable error report.
pub fn error_json(e: &Error) -> String {
    serde_json::json!({ "error": { "origin": e.origin(), "message": e.to_string() } }).to_string()
}

//! Command-line front end.
//!
//! Exit codes: 0 success, 2 config error, 3 numerical divergence,
//! 4 admissibility failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{
    ensemble_ms_error, generalized_derivative_check, make_bump, theorem1_bound, BoundReport,
    GeneralizedDerivativeReport,
};
use crate::config::{Experiment, ExperimentConfig, FunctionSection};
use crate::design::{admissible_r_min, hurwitz_check, is_admissible, solve_lyapunov, LinearDesign};
use crate::error::{Error, Result};
use crate::noise::RNG_DESCRIPTION;
use crate::simulate::simulate_td;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_ADMISSIBILITY: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "std",
    about = "Stochastic tracking differentiator simulation and verification toolkit",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Path to a JSON experiment config, or the name of a bundled preset
    /// (fig1_linear_r30, fig2_nonlinear_r30, fig3_nonlinear_r15,
    /// zero_noise_baseline).
    #[arg(long)]
    pub config: String,

    /// Seed for single-trajectory commands (default: ensemble.base_seed).
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory (default: the config's `outputs` field).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Overrides ensemble.paths.
    #[arg(long)]
    pub paths: Option<usize>,

    /// Downgrades admissibility failures to warnings.
    #[arg(long)]
    pub allow_out_of_range: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one trajectory; writes trajectory.csv and summary.json.
    Simulate(CommonArgs),
    /// Monte Carlo ensemble of tracking errors; writes ms_error.csv and
    /// summary.json with the bound constants.
    Ensemble(CommonArgs),
    /// Print the design report: Hurwitz verdict, Lyapunov solution,
    /// certificate constants, and the admissible gain range.
    Check(CommonArgs),
    /// Generalized-derivative functionals against the configured bump;
    /// writes gendiff.json.
    Gendiff(CommonArgs),
}

/// Runs the CLI and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Ensemble(args) => cmd_ensemble(args),
        Command::Check(args) => cmd_check(args),
        Command::Gendiff(args) => cmd_gendiff(args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite { .. } | Error::PathDiverged { .. } => EXIT_DIVERGENCE,
        Error::NotAdmissible { .. } => EXIT_ADMISSIBILITY,
        _ => EXIT_CONFIG,
    }
}

fn load(args: &CommonArgs) -> Result<(Experiment, PathBuf)> {
    let config = ExperimentConfig::resolve(&args.config)?;
    let experiment = config.build()?;
    let out = args.out.clone().unwrap_or_else(|| experiment.config.outputs.clone());
    std::fs::create_dir_all(&out)?;
    Ok((experiment, out))
}

fn run_seed(args: &CommonArgs, experiment: &Experiment) -> u64 {
    args.seed.unwrap_or(experiment.config.ensemble.base_seed)
}

fn write_json<T: Serialize>(path: &PathBuf, value: &T) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    let text = serde_json::to_string_pretty(value)?;
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

#[derive(Serialize)]
struct SimulateSummary {
    experiment_digest: String,
    seed: u64,
    rng: &'static str,
    t_end: f64,
    dt: f64,
    diverged: bool,
    final_tracking_error: f64,
    final_derivative_error: Option<f64>,
    max_abs_state: Vec<f64>,
}

fn cmd_simulate(args: &CommonArgs) -> Result<()> {
    let (experiment, out) = load(args)?;
    let seed = run_seed(args, &experiment);
    let traj = simulate_td(&experiment.td, &experiment.signal, &experiment.grid, seed)?;

    let csv_path = out.join("trajectory.csv");
    let mut file = BufWriter::new(File::create(&csv_path)?);
    writeln!(file, "# experiment: {}", experiment.digest)?;
    traj.write_csv(&mut file)?;

    let last = traj.len() - 1;
    let n = traj.order();
    let final_derivative_error = experiment
        .signal
        .higher_derivative(1, traj.times[last])
        .map(|vd| (traj.states[last][1] - vd).abs());
    let summary = SimulateSummary {
        experiment_digest: experiment.digest.clone(),
        seed,
        rng: RNG_DESCRIPTION,
        t_end: experiment.grid.t_end(),
        dt: experiment.grid.dt(),
        diverged: false,
        final_tracking_error: (traj.states[last][0] - traj.v_values[last]).abs(),
        final_derivative_error,
        max_abs_state: (0..n)
            .map(|i| traj.component(i).iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .collect(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!("wrote {} and summary.json", csv_path.display());
    Ok(())
}

#[derive(Serialize)]
struct EnsembleSummary {
    experiment_digest: String,
    base_seed: u64,
    paths: usize,
    path_seed_rule: &'static str,
    rng: &'static str,
    bound: Option<BoundReport>,
    /// Mean of the per-time estimates over `t >= T`.
    window_mean_ms_error: Option<f64>,
}

fn cmd_ensemble(args: &CommonArgs) -> Result<()> {
    let (experiment, out) = load(args)?;
    let paths = args.paths.unwrap_or(experiment.config.ensemble.paths);
    let base_seed = experiment.config.ensemble.base_seed;

    let bound = match &experiment.certificate {
        Some(cert) => {
            let n = experiment.td.order();
            let r = experiment.td.r();
            if is_admissible(cert, n, r) {
                Some(theorem1_bound(
                    cert,
                    &experiment.td,
                    &experiment.signal,
                    experiment.config.bounds.mu,
                    experiment.config.bounds.t_horizon,
                )?)
            } else if args.allow_out_of_range {
                eprintln!(
                    "warning: r = {r} is outside the admissible range (r_min = {:.4}); bound column omitted",
                    admissible_r_min(cert, n)
                );
                None
            } else {
                return Err(Error::NotAdmissible {
                    r,
                    reason: format!(
                        "smallest admissible r is {:.6} (use --allow-out-of-range to run anyway)",
                        admissible_r_min(cert, n)
                    ),
                });
            }
        }
        None => {
            eprintln!("warning: no certificate available; bound column omitted");
            None
        }
    };

    let stats =
        ensemble_ms_error(&experiment.td, &experiment.signal, &experiment.grid, paths, base_seed)?;

    let csv_path = out.join("ms_error.csv");
    let mut file = BufWriter::new(File::create(&csv_path)?);
    writeln!(file, "# experiment: {}", experiment.digest)?;
    stats.write_csv(
        bound.as_ref().map(|b| (b.theorem1_bound_optimized, b.t_horizon)),
        &experiment.digest,
        &mut file,
    )?;

    let t_horizon = experiment.config.bounds.t_horizon;
    let window: Vec<f64> = stats
        .times
        .iter()
        .zip(&stats.ms_error)
        .filter(|(t, _)| **t >= t_horizon)
        .map(|(_, e)| *e)
        .collect();
    let summary = EnsembleSummary {
        experiment_digest: experiment.digest.clone(),
        base_seed,
        paths,
        path_seed_rule: "splitmix64(base_seed xor index * 0x9e3779b97f4a7c15)",
        rng: RNG_DESCRIPTION,
        bound,
        window_mean_ms_error: if window.is_empty() {
            None
        } else {
            Some(window.iter().sum::<f64>() / window.len() as f64)
        },
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!("wrote {} and summary.json", csv_path.display());
    Ok(())
}

fn cmd_check(args: &CommonArgs) -> Result<()> {
    let (experiment, _) = load(args)?;
    let n = experiment.td.order();
    let r = experiment.td.r();

    match &experiment.config.td.f {
        FunctionSection::Linear { coefficients } => {
            let design = LinearDesign::new(coefficients.clone())?;
            let stable = hurwitz_check(&design);
            println!("design: linear, coefficients {coefficients:?}");
            println!("hurwitz: {stable}");
            if stable {
                let (q, _) = solve_lyapunov(&design)?;
                println!("lyapunov solution Q:");
                for i in 0..n {
                    let row: Vec<String> = (0..n).map(|j| format!("{:.6}", q[(i, j)])).collect();
                    println!("  [{}]", row.join(", "));
                }
            }
        }
        FunctionSection::BuiltinNonlinear2d => {
            println!("design: builtin nonlinear (order 2)");
        }
    }

    let cert = experiment
        .certificate
        .as_ref()
        .ok_or_else(|| Error::Config("check requires a certificate (explicit or linear-derived)".into()))?;
    println!(
        "certificate: lambda1 = {}, lambda2 = {}, lambda3 = {}, lambda4 = {}, c1 = {}, c2 = {}, theta = {}",
        cert.lambda1(),
        cert.lambda2(),
        cert.lambda3(),
        cert.lambda4(),
        cert.c1(),
        cert.c2(),
        cert.theta()
    );

    let r_min = admissible_r_min(cert, n);
    let admissible = is_admissible(cert, n, r);
    println!("r_min: {r_min:.6}");
    println!("r = {r}: {}", if admissible { "admissible" } else { "NOT admissible" });

    if !admissible {
        if args.allow_out_of_range {
            eprintln!("warning: r = {r} is outside the admissible range (r_min = {r_min:.6})");
        } else {
            return Err(Error::NotAdmissible {
                r,
                reason: format!("smallest admissible r is {r_min:.6}"),
            });
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct GendiffSummary {
    experiment_digest: String,
    seed: u64,
    rng: &'static str,
    a: f64,
    center: f64,
    width: f64,
    reports: Vec<GeneralizedDerivativeReport>,
}

fn cmd_gendiff(args: &CommonArgs) -> Result<()> {
    let (experiment, out) = load(args)?;
    let seed = run_seed(args, &experiment);
    let gd = &experiment.config.gendiff;
    let phi = make_bump(gd.a, gd.center, gd.width)?;
    let traj = simulate_td(&experiment.td, &experiment.signal, &experiment.grid, seed)?;

    let reports = gd
        .orders
        .iter()
        .map(|&order| {
            generalized_derivative_check(&traj, &experiment.td, &experiment.signal, &phi, order)
        })
        .collect::<Result<Vec<_>>>()?;

    let summary = GendiffSummary {
        experiment_digest: experiment.digest.clone(),
        seed,
        rng: RNG_DESCRIPTION,
        a: gd.a,
        center: gd.center,
        width: gd.width,
        reports,
    };
    let path = out.join("gendiff.json");
    write_json(&path, &summary)?;
    println!("wrote {}", path.display());
    Ok(())
}

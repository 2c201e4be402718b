//! `asyncdd`: experiment driver for the overlapping domain decomposition
//! solvers. Builds Poisson test problems from a configuration, runs the
//! solver matrix (solver x mode x scaling x imbalance), and emits JSON
//! records and CSV histories; the library's verification oracles are exposed
//! as subcommands.
//!
//! Exit codes: 0 on success, 3 when a solve completed without reaching its
//! tolerance, 1 on errors (2 is clap's usage-error code).

// Negated comparisons like `!(x > 0.0)` are deliberate so that NaN inputs
// are rejected, not accepted.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod record;
mod strp;
mod verify;

use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{build_instance, execute, execute_on, ConfigArgs, ExperimentConfig, Solver};
use record::RunRecord;

const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "asyncdd",
    version,
    about = "Synchronous and asynchronous overlapping Schwarz solvers on an emulated one-sided communication layer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configured solve and write its record and history.
    Run(RunArgs),
    /// Run a scaling sweep over subdomain counts or mesh sizes.
    Sweep(SweepArgs),
    /// Run the verification oracle suites and print a report.
    Verify(VerifyArgs),
    /// Measure an error-vs-time history with the stop-and-repeat protocol.
    Export(ExportArgs),
    /// Write the decomposition of a configuration as JSON.
    Partition(PartitionArgs),
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

/// Sweep axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Axis {
    /// Vary the subdomain count.
    #[value(alias = "P")]
    P,
    /// Vary the mesh size.
    N,
}

/// How problem sizes relate across sweep points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scaling {
    /// Fixed global problem size.
    Strong,
    /// Mesh size grows with P to keep the per-subdomain size constant.
    Weak,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// What the sweep varies.
    #[arg(long, value_enum)]
    axis: Axis,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    /// Scaling regime for P sweeps.
    #[arg(long, value_enum, default_value = "strong")]
    scaling: Scaling,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite to run.
    #[arg(value_enum, default_value = "all")]
    suite: verify::Suite,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Target global error.
    #[arg(long)]
    epsilon: f64,
    /// Warm-up iterations used to estimate the budget unit.
    #[arg(long, default_value_t = 5)]
    discard: u64,
    /// Cap on budget-growing repetitions.
    #[arg(long = "max-repeats", default_value_t = 40)]
    max_repeats: u64,
}

#[derive(Args)]
struct PartitionArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

fn main() -> ExitCode {
    match dispatch_command(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch_command(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => cmd_run(&args.config.resolve()?),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Verify(args) => Ok(if verify::run(args.suite)? {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        }),
        Command::Export(args) => cmd_export(&args),
        Command::Partition(args) => cmd_partition(&args.config.resolve()?),
    }
}

fn cmd_run(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let inst = build_instance(cfg)?;
    let mut all_converged = true;
    for repeat in 0..cfg.repeats {
        let exec = execute_on(cfg, &inst)?;
        let record = RunRecord::from_execution(cfg, &exec)?;
        all_converged &= record.converged;
        match &cfg.output {
            Some(dir) => {
                record::write_outputs(dir, &record, &exec, repeat)?;
                println!("{}", record.summary());
            }
            None => println!("{}", serde_json::to_string_pretty(&record)?),
        }
    }
    Ok(exit_for(all_converged))
}

fn exit_for(converged: bool) -> ExitCode {
    if converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NOT_CONVERGED)
    }
}

/// Mesh size that keeps the unknowns-per-subdomain of `template` when run
/// with `parts` subdomains. Two-level configurations are rounded to a
/// multiple of 8 so a nested coarse grid stays available.
fn weak_mesh_size(template: &ExperimentConfig, parts: usize) -> usize {
    let local = ((template.n - 1) * (template.n - 1)) as f64 / template.parts as f64;
    let exact = 1.0 + (local * parts as f64).sqrt();
    if template.solver == Solver::Ras2 {
        (((exact / 8.0).round() as usize) * 8).max(8)
    } else {
        (exact.round() as usize).max(2)
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<ExitCode> {
    let template = args.config.resolve()?;
    if args.axis == Axis::N && args.scaling == Scaling::Weak {
        bail!("weak scaling varies P; use --axis P");
    }
    let dir = template
        .output
        .clone()
        .context("sweep needs --output to collect its records")?;
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let points: Vec<(usize, ExperimentConfig)> = args
        .values
        .iter()
        .map(|&value| {
            let mut cfg = template.clone();
            match args.axis {
                Axis::P => {
                    cfg.parts = value;
                    if args.scaling == Scaling::Weak {
                        cfg.n = weak_mesh_size(&template, value);
                    }
                }
                Axis::N => cfg.n = value,
            }
            (value, cfg)
        })
        .collect();

    let mut summary = std::fs::File::create(dir.join("summary.csv"))
        .with_context(|| format!("writing {}", dir.join("summary.csv").display()))?;
    writeln!(
        summary,
        "axis,solver,mode,time_s,final_norm,rho_hat,async_degree"
    )?;

    let axis_name = match args.axis {
        Axis::P => "P",
        Axis::N => "n",
    };
    let mut all_converged = true;
    for (value, cfg) in &points {
        let label = format!("{axis_name}{value}");
        match cfg.validate().and_then(|()| execute(cfg)) {
            Ok(exec) => {
                let record = RunRecord::from_execution(cfg, &exec)?;
                all_converged &= record.converged;
                let path = dir.join(format!("record_{label}.json"));
                std::fs::write(&path, serde_json::to_string_pretty(&record)?)
                    .with_context(|| format!("writing {}", path.display()))?;
                let mut history = std::fs::File::create(dir.join(format!("history_{label}.csv")))?;
                asyncdd::metrics::write_history_csv(&mut history, &exec.result.residual_history)?;
                let float_col = |v: Option<f64>| v.map_or("nan".into(), |x| format!("{x:.17}"));
                writeln!(
                    summary,
                    "{value},{},{},{:.9e},{:.17e},{},{}",
                    solver_name(cfg.solver),
                    mode_name(cfg.mode),
                    record.wall_time_s,
                    record.solver_residual_norm,
                    float_col(record.metrics.rho_hat),
                    float_col(record.metrics.async_degree),
                )?;
                println!("{}", record.summary());
            }
            Err(err) => {
                // A failed point is recorded and the sweep continues.
                all_converged = false;
                let note = serde_json::json!({
                    "config": cfg,
                    "error": format!("{err:#}"),
                });
                let path = dir.join(format!("record_{label}.json"));
                std::fs::write(&path, serde_json::to_string_pretty(&note)?)
                    .with_context(|| format!("writing {}", path.display()))?;
                writeln!(
                    summary,
                    "{value},{},{},nan,nan,nan,nan",
                    solver_name(cfg.solver),
                    mode_name(cfg.mode),
                )?;
                eprintln!("point {label} failed: {err:#}");
            }
        }
    }
    Ok(exit_for(all_converged))
}

fn solver_name(solver: Solver) -> &'static str {
    match solver {
        Solver::Ras => "ras",
        Solver::Js => "js",
        Solver::Ras2 => "ras2",
    }
}

fn mode_name(mode: config::Mode) -> &'static str {
    match mode {
        config::Mode::Sync => "sync",
        config::Mode::Async => "async",
        config::Mode::AsyncLockEmulated => "async-lock-emulated",
    }
}

fn cmd_export(args: &ExportArgs) -> Result<ExitCode> {
    let cfg = args.config.resolve()?;
    let report = strp::measure(&cfg, args.epsilon, args.discard, args.max_repeats)?;
    match &cfg.output {
        Some(dir) => {
            strp::write_outputs(Path::new(dir), &report)?;
            println!(
                "{} samples, alpha = {:.3e} s, final error {:.3e} ({})",
                report.samples.len(),
                report.alpha_s,
                report.samples.last().map_or(f64::NAN, |s| s.global_error),
                if report.reached {
                    "reached epsilon"
                } else {
                    "epsilon not reached"
                },
            );
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(exit_for(report.reached))
}

fn cmd_partition(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let inst = build_instance(cfg)?;
    match &cfg.output {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join("partition.json");
            let mut file = std::fs::File::create(&path)
                .with_context(|| format!("writing {}", path.display()))?;
            asyncdd::decomp::write_partition_json(&mut file, &inst.decomp)?;
            println!("wrote {}", path.display());
        }
        None => {
            let mut out = std::io::stdout().lock();
            asyncdd::decomp::write_partition_json(&mut out, &inst.decomp)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

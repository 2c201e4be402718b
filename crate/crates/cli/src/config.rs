//! Experiment configuration: a serializable description of one solver run,
//! plus the machinery that realizes it (mesh assembly, decomposition, solver
//! dispatch and synchronous-baseline calibration).

use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use asyncdd::comm::SchedMode;
use asyncdd::decomp::{
    build_coarse, build_js_partitions, extend_overlap, partition_graph, partition_rectangular,
    CoarseSpace, Decomposition, JsPartition,
};
use asyncdd::fem::{assemble, DiscreteProblem, Mesh};
use asyncdd::solvers::{
    js_async, js_sync, ras_async, ras_sync, two_level_async, two_level_sync, SolveOptions,
    SolveResult, SolverKind,
};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

/// Solver family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    /// One-level restricted additive Schwarz.
    Ras,
    /// One-level Jacobi-Schwarz.
    Js,
    /// Two-level RAS with an additive coarse grid.
    Ras2,
}

impl Solver {
    pub fn kind(self) -> SolverKind {
        match self {
            Solver::Ras => SolverKind::Ras,
            Solver::Js => SolverKind::JacobiSchwarz,
            Solver::Ras2 => SolverKind::TwoLevelRas,
        }
    }
}

/// Execution mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Lockstep iterations with collective residual checks.
    Sync,
    /// Free-running workers over one-sided windows.
    Async,
    /// Free-running workers with an emulated per-access lock overhead.
    AsyncLockEmulated,
}

impl Mode {
    pub fn is_async(self) -> bool {
        !matches!(self, Mode::Sync)
    }
}

/// Domain partitioner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Partitioner {
    /// Tensor grid of rectangular blocks.
    Rectangular,
    /// Seeded greedy graph growing on the matrix adjacency.
    Graph,
}

/// Everything needed to reproduce one experiment. Serializes to JSON and
/// round-trips losslessly; unset fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Mesh cells per side of the unit square.
    pub n: usize,
    /// Number of subdomains.
    pub parts: usize,
    /// How the interior unknowns are split.
    pub partitioner: Partitioner,
    /// Overlap depth in adjacency layers.
    pub depth: usize,
    /// Solver family.
    pub solver: Solver,
    /// Execution mode.
    pub mode: Mode,
    /// Residual tolerance; `0` disables convergence detection.
    pub tol: f64,
    /// Cap on local updates per subdomain.
    pub max_iterations: u64,
    /// Wall-clock budget in seconds.
    pub max_time_s: f64,
    /// Load imbalance factor: subdomain 0 is grown to hold at least this
    /// multiple of the average unknown count (rectangular partitioner only).
    pub imbalance: f64,
    /// Coarse sizing: aim for roughly `parts * ratio` fine unknowns per
    /// coarse unknown.
    pub coarse_ratio: usize,
    /// Seed for the graph partitioner.
    pub seed: u64,
    /// Emulated per-access lock overhead for `async-lock-emulated` runs.
    pub access_delay_us: u64,
    /// Repetitions of the run.
    pub repeats: u64,
    /// Output directory; results go to stdout when unset.
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 64,
            parts: 4,
            partitioner: Partitioner::Rectangular,
            depth: 2,
            solver: Solver::Ras,
            mode: Mode::Sync,
            tol: 1e-5,
            max_iterations: 100_000,
            max_time_s: 300.0,
            imbalance: 1.0,
            coarse_ratio: 16,
            seed: 0,
            access_delay_us: 20,
            repeats: 1,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            bail!("n must be at least 2, got {}", self.n);
        }
        if self.parts == 0 {
            bail!("P must be at least 1");
        }
        let unknowns = (self.n - 1) * (self.n - 1);
        if self.parts > unknowns {
            bail!(
                "P = {} exceeds the {} unknowns of n = {}",
                self.parts,
                unknowns,
                self.n
            );
        }
        if self.depth == 0 {
            bail!("overlap depth must be at least 1");
        }
        if !self.tol.is_finite() || self.tol < 0.0 {
            bail!("tol must be finite and nonnegative, got {}", self.tol);
        }
        if self.max_iterations == 0 {
            bail!("max-iter must be at least 1");
        }
        if !(self.max_time_s > 0.0) {
            bail!("max-time must be positive, got {}", self.max_time_s);
        }
        if !(self.imbalance >= 1.0) {
            bail!("imbalance must be at least 1, got {}", self.imbalance);
        }
        if self.coarse_ratio == 0 {
            bail!("coarse-ratio must be at least 1");
        }
        if self.repeats == 0 {
            bail!("repeats must be at least 1");
        }
        if self.imbalance > 1.0 && self.partitioner == Partitioner::Graph {
            bail!("imbalance is only supported by the rectangular partitioner");
        }
        Ok(())
    }

    /// Threads a run will occupy: one per subdomain, plus the coarse worker
    /// for two-level solves and the monitor for asynchronous ones.
    pub fn workers(&self) -> usize {
        self.parts + usize::from(self.solver == Solver::Ras2) + usize::from(self.mode.is_async())
    }
}

/// Near-square `px * py == parts` factorization for the rectangular
/// partitioner, preferring the wider arrangement.
pub fn grid_for(parts: usize) -> (usize, usize) {
    let mut py = 1;
    let mut d = 1;
    while d * d <= parts {
        if parts.is_multiple_of(d) {
            py = d;
        }
        d += 1;
    }
    (parts / py, py)
}

/// A realized problem: discretization plus decomposition and the
/// solver-specific extras.
pub struct Instance {
    pub problem: DiscreteProblem,
    pub decomp: Decomposition,
    pub js: Option<Vec<JsPartition>>,
    pub coarse: Option<CoarseSpace>,
}

pub fn build_instance(cfg: &ExperimentConfig) -> Result<Instance> {
    let mesh = Mesh::unit_square(cfg.n)?;
    let problem = assemble(&mesh)?;
    let base = match cfg.partitioner {
        Partitioner::Rectangular => {
            let (px, py) = grid_for(cfg.parts);
            partition_rectangular(&mesh, px, py, cfg.imbalance)
                .with_context(|| format!("partitioning n = {} into {px} x {py}", cfg.n))?
        }
        Partitioner::Graph => partition_graph(&problem.matrix, cfg.parts, cfg.seed)?,
    };
    let decomp = extend_overlap(&problem.matrix, &base, cfg.depth)?;
    let js = (cfg.solver == Solver::Js).then(|| build_js_partitions(&decomp));
    let coarse = (cfg.solver == Solver::Ras2)
        .then(|| build_coarse(&problem, &decomp, cfg.coarse_ratio))
        .transpose()
        .context("building the coarse space")?;
    Ok(Instance {
        problem,
        decomp,
        js,
        coarse,
    })
}

pub(crate) fn options_for(cfg: &ExperimentConfig) -> SolveOptions {
    SolveOptions {
        tol: cfg.tol,
        max_iterations: cfg.max_iterations,
        max_time: Duration::from_secs_f64(cfg.max_time_s),
        scheduler: SchedMode::FreeRun,
        record_trajectory: false,
        audit_exchanges: false,
        access_delay: (cfg.mode == Mode::AsyncLockEmulated)
            .then(|| Duration::from_micros(cfg.access_delay_us)),
        ..SolveOptions::new(cfg.solver.kind())
    }
}

/// Runs the right solver entry point for the configuration; the instance
/// must have been built from the same configuration.
pub(crate) fn dispatch(
    cfg: &ExperimentConfig,
    inst: &Instance,
    opts: &SolveOptions,
) -> asyncdd::Result<SolveResult> {
    match (cfg.solver, cfg.mode.is_async()) {
        (Solver::Ras, false) => ras_sync(&inst.problem, &inst.decomp, opts),
        (Solver::Ras, true) => ras_async(&inst.problem, &inst.decomp, opts),
        (Solver::Js, false) => {
            js_sync(&inst.problem, &inst.decomp, inst.js.as_ref().unwrap(), opts)
        }
        (Solver::Js, true) => {
            js_async(&inst.problem, &inst.decomp, inst.js.as_ref().unwrap(), opts)
        }
        (Solver::Ras2, false) => two_level_sync(
            &inst.problem,
            &inst.decomp,
            inst.coarse.as_ref().unwrap(),
            opts,
        ),
        (Solver::Ras2, true) => two_level_async(
            &inst.problem,
            &inst.decomp,
            inst.coarse.as_ref().unwrap(),
            opts,
        ),
    }
}

/// A completed solve together with the calibration needed for its metrics.
pub struct Execution {
    pub result: SolveResult,
    /// Wall time per iteration of the synchronous counterpart (measured on
    /// this run when it is synchronous, or on a short calibration run).
    pub tau_sync: Duration,
}

/// Runs the configured solver. Asynchronous runs are preceded by a short
/// synchronous run of the same problem to calibrate the per-iteration cost
/// that time-normalized metrics are measured against.
pub fn execute_on(cfg: &ExperimentConfig, inst: &Instance) -> Result<Execution> {
    let tau_sync = cfg
        .mode
        .is_async()
        .then(|| calibrate(cfg, inst))
        .transpose()?;
    let opts = options_for(cfg);
    let result = dispatch(cfg, inst, &opts)?;
    let tau_sync = match tau_sync {
        Some(tau) => tau,
        None => per_iteration(&result),
    };
    Ok(Execution { result, tau_sync })
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Execution> {
    let inst = build_instance(cfg)?;
    execute_on(cfg, &inst)
}

fn per_iteration(result: &SolveResult) -> Duration {
    let iters = result.sync_iterations.unwrap_or(1).max(1);
    Duration::from_secs_f64(result.wall_time.as_secs_f64() / iters as f64)
}

fn calibrate(cfg: &ExperimentConfig, inst: &Instance) -> Result<Duration> {
    let sync_cfg = ExperimentConfig {
        mode: Mode::Sync,
        ..cfg.clone()
    };
    let opts = SolveOptions {
        tol: 0.0,
        max_iterations: cfg.max_iterations.min(20),
        ..options_for(&sync_cfg)
    };
    let result = dispatch(&sync_cfg, inst, &opts)?;
    Ok(per_iteration(&result))
}

/// Configuration flags shared by the subcommands; every flag overrides the
/// corresponding field of `--config` (or of the defaults).
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON configuration file to start from.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Mesh cells per side.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of subdomains.
    #[arg(long = "P", visible_alias = "parts")]
    pub parts: Option<usize>,
    /// Domain partitioner.
    #[arg(long, value_enum)]
    pub partitioner: Option<Partitioner>,
    /// Overlap depth.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Solver family.
    #[arg(long, value_enum)]
    pub solver: Option<Solver>,
    /// Execution mode.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Residual tolerance (0 disables detection).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Cap on local updates per subdomain.
    #[arg(long = "max-iter")]
    pub max_iterations: Option<u64>,
    /// Wall-clock budget in seconds.
    #[arg(long = "max-time", value_name = "SECONDS")]
    pub max_time_s: Option<f64>,
    /// Load imbalance factor for subdomain 0.
    #[arg(long)]
    pub imbalance: Option<f64>,
    /// Coarse sizing ratio.
    #[arg(long = "coarse-ratio")]
    pub coarse_ratio: Option<usize>,
    /// Graph partitioner seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-access overhead of async-lock-emulated runs, in microseconds.
    #[arg(long = "access-delay-us")]
    pub access_delay_us: Option<u64>,
    /// Repetitions of the run.
    #[arg(long)]
    pub repeats: Option<u64>,
    /// Output directory.
    #[arg(long, short = 'o', value_name = "DIR")]
    pub output: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(parts) = self.parts {
            cfg.parts = parts;
        }
        if let Some(p) = self.partitioner {
            cfg.partitioner = p;
        }
        if let Some(depth) = self.depth {
            cfg.depth = depth;
        }
        if let Some(solver) = self.solver {
            cfg.solver = solver;
        }
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        if let Some(tol) = self.tol {
            cfg.tol = tol;
        }
        if let Some(k) = self.max_iterations {
            cfg.max_iterations = k;
        }
        if let Some(t) = self.max_time_s {
            cfg.max_time_s = t;
        }
        if let Some(f) = self.imbalance {
            cfg.imbalance = f;
        }
        if let Some(r) = self.coarse_ratio {
            cfg.coarse_ratio = r;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(d) = self.access_delay_us {
            cfg.access_delay_us = d;
        }
        if let Some(r) = self.repeats {
            cfg.repeats = r;
        }
        if let Some(out) = &self.output {
            cfg.output = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ExperimentConfig {
            n: 48,
            parts: 6,
            partitioner: Partitioner::Graph,
            solver: Solver::Ras2,
            mode: Mode::AsyncLockEmulated,
            tol: 3e-7,
            imbalance: 1.0,
            seed: 11,
            output: Some(PathBuf::from("/tmp/out")),
            ..ExperimentConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_config_files_take_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"n": 16, "solver": "js"}"#).unwrap();
        assert_eq!(cfg.n, 16);
        assert_eq!(cfg.solver, Solver::Js);
        assert_eq!(cfg.parts, 4);
        assert_eq!(cfg.mode, Mode::Sync);
    }

    #[test]
    fn grids_are_near_square() {
        assert_eq!(grid_for(1), (1, 1));
        assert_eq!(grid_for(2), (2, 1));
        assert_eq!(grid_for(4), (2, 2));
        assert_eq!(grid_for(8), (4, 2));
        assert_eq!(grid_for(12), (4, 3));
        assert_eq!(grid_for(16), (4, 4));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = ExperimentConfig {
            depth: 0,
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig {
            n: 4,
            parts: 100,
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig {
            imbalance: 1.5,
            partitioner: Partitioner::Graph,
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}

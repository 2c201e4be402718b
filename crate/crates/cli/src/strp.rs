//! Error-vs-time export through the stop-and-repeat protocol.
//!
//! Free-running solvers have no per-iteration history that is comparable
//! across runs, so the history is measured by rerunning the same
//! configuration from scratch under growing wall-clock budgets and recording
//! the final error of every repetition.

use std::io::Write;
use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};
use asyncdd::linalg::{max_abs_diff, LuOrdering, SparseLu};
use asyncdd::metrics::{stop_and_repeat, RepeatableRun, StopAndRepeatReport};
use asyncdd::solvers::SolveOptions;
use serde::Serialize;

use crate::config::{build_instance, dispatch, options_for, ExperimentConfig, Instance};
use crate::record::EnvStamp;

/// Adapter that reruns one configuration from its initial state, either for
/// a fixed number of local updates or under a wall-clock budget.
struct ConfiguredRun<'a> {
    cfg: &'a ExperimentConfig,
    inst: &'a Instance,
    /// Exact discrete solution, the reference for the global error.
    exact: Vec<f64>,
}

impl RepeatableRun for ConfiguredRun<'_> {
    fn run_for_iterations(&mut self, iterations: u64) -> asyncdd::Result<Duration> {
        let opts = SolveOptions {
            tol: 0.0,
            max_iterations: iterations,
            max_time: Duration::from_secs_f64(self.cfg.max_time_s),
            ..options_for(self.cfg)
        };
        Ok(dispatch(self.cfg, self.inst, &opts)?.wall_time)
    }

    fn run_for_budget(&mut self, budget: Duration) -> asyncdd::Result<f64> {
        let opts = SolveOptions {
            tol: 0.0,
            max_iterations: u64::MAX / 2,
            max_time: budget,
            ..options_for(self.cfg)
        };
        let res = dispatch(self.cfg, self.inst, &opts)?;
        Ok(max_abs_diff(&res.u, &self.exact))
    }
}

/// Serializable form of the report.
#[derive(Debug, Serialize)]
pub struct ExportReport {
    pub config: ExperimentConfig,
    pub epsilon: f64,
    /// Estimated seconds per iteration from the discarded warm-up.
    pub alpha_s: f64,
    /// Whether the error reached epsilon within the allowed repeats.
    pub reached: bool,
    pub samples: Vec<ExportSample>,
    /// Budgeted reruns only measure real concurrency; an oversubscribed
    /// stamp means the samples reflect scheduler time slicing instead.
    pub environment: EnvStamp,
}

#[derive(Debug, Serialize)]
pub struct ExportSample {
    pub repeat: u64,
    pub budget_s: f64,
    pub global_error: f64,
}

impl ExportReport {
    fn new(cfg: &ExperimentConfig, epsilon: f64, report: &StopAndRepeatReport) -> Self {
        Self {
            config: cfg.clone(),
            epsilon,
            alpha_s: report.alpha.as_secs_f64(),
            reached: report.reached,
            samples: report
                .samples
                .iter()
                .map(|&(repeat, budget, err)| ExportSample {
                    repeat,
                    budget_s: budget.as_secs_f64(),
                    global_error: err,
                })
                .collect(),
            environment: EnvStamp::for_workers(cfg.workers()),
        }
    }
}

/// Measures the history and returns the report; `discard` warm-up iterations
/// estimate the budget unit.
pub fn measure(
    cfg: &ExperimentConfig,
    epsilon: f64,
    discard: u64,
    max_repeats: u64,
) -> Result<ExportReport> {
    let inst = build_instance(cfg)?;
    let lu = SparseLu::factor(&inst.problem.matrix, LuOrdering::ReverseCuthillMcKee)
        .context("factorizing the reference problem")?;
    let exact = lu.solve(&inst.problem.rhs);
    let mut run = ConfiguredRun {
        cfg,
        inst: &inst,
        exact,
    };
    let report = stop_and_repeat(&mut run, epsilon, discard, max_repeats)?;
    Ok(ExportReport::new(cfg, epsilon, &report))
}

/// Writes `strp.json` and `strp.csv` into `dir`.
pub fn write_outputs(dir: &Path, report: &ExportReport) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let json_path = dir.join("strp.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(report)?)
        .with_context(|| format!("writing {}", json_path.display()))?;
    let csv_path = dir.join("strp.csv");
    let mut file = std::fs::File::create(&csv_path)
        .with_context(|| format!("writing {}", csv_path.display()))?;
    writeln!(file, "repeat,budget_s,global_error")?;
    for s in &report.samples {
        writeln!(
            file,
            "{},{:.9e},{:.17e}",
            s.repeat, s.budget_s, s.global_error
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Mode;

    #[test]
    fn sync_history_reaches_epsilon_with_nonincreasing_error() {
        let cfg = ExperimentConfig {
            n: 24,
            parts: 2,
            mode: Mode::Sync,
            ..ExperimentConfig::default()
        };
        let report = measure(&cfg, 1e-3, 5, 60).unwrap();
        assert!(report.reached, "never reached 1e-3: {:?}", report.samples);
        assert!(!report.samples.is_empty());
        // Budgets grow linearly by construction.
        for (i, s) in report.samples.iter().enumerate() {
            let expected = report.alpha_s * (i + 1) as f64;
            assert!((s.budget_s - expected).abs() <= 1e-9 * expected.max(1.0));
        }
        assert!(report.samples.last().unwrap().global_error <= 1e-3);
    }
}

//! Run records: everything needed to regenerate a figure-style output
//! without rerunning, serialized as JSON next to the CSV history.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use asyncdd::metrics::{async_degree, rho_hat, rho_tilde, write_history_csv, Metrics};
use asyncdd::solvers::{hardware_oversubscribed, CoarseStats};
use serde::{Deserialize, Serialize};

use crate::config::{Execution, ExperimentConfig};

/// Snapshot of the host the run executed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvStamp {
    /// Threads the run occupied (subdomains + coarse + monitor).
    pub workers: usize,
    /// Hardware threads the host advertises.
    pub hardware_parallelism: usize,
    /// Whether the run had more workers than hardware threads. Wall-clock
    /// comparisons are only meaningful when this is false.
    pub oversubscribed: bool,
    /// Value of `ASYNCDD_PIN_WORKERS` if set; recorded as a hint only, the
    /// solver does not pin threads itself.
    pub pin_workers_hint: Option<String>,
    /// Seconds since the Unix epoch at record creation.
    pub timestamp_unix_s: u64,
}

impl EnvStamp {
    pub fn for_workers(workers: usize) -> Self {
        let hardware = std::thread::available_parallelism()
            .map(usize::from)
            .unwrap_or(1);
        Self {
            workers,
            hardware_parallelism: hardware,
            oversubscribed: hardware_oversubscribed(workers),
            pin_workers_hint: std::env::var("ASYNCDD_PIN_WORKERS").ok(),
            timestamp_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

/// Complete result of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    /// The configuration that produced this record.
    pub config: ExperimentConfig,
    /// Whether the tolerance was met.
    pub converged: bool,
    /// Synchronous iteration count, or the maximum update count of an
    /// asynchronous run.
    pub iterations: u64,
    /// Wall time of the solve in seconds.
    pub wall_time_s: f64,
    /// Final residual estimate from the published contributions.
    pub solver_residual_norm: f64,
    /// Recomputed `||f - A u||` of the returned solution.
    pub true_residual_norm: f64,
    /// Updates performed by each subdomain worker.
    pub update_counts: Vec<u64>,
    /// Convergence-rate and asynchrony metrics.
    pub metrics: Metrics,
    /// Window reads that observed a value nobody wrote (audited runs only).
    pub audit_violations: u64,
    /// Coarse-worker counters for two-level runs.
    pub coarse: Option<CoarseStats>,
    /// Host snapshot.
    pub environment: EnvStamp,
}

impl RunRecord {
    pub fn from_execution(cfg: &ExperimentConfig, exec: &Execution) -> Result<Self> {
        let res = &exec.result;
        let iterations = res
            .sync_iterations
            .or_else(|| res.update_counts.iter().max().copied())
            .unwrap_or(0)
            .max(1);
        // Metrics are best-effort: a run too short to populate its history
        // (or to perform any update) yields nulls, not a failed record.
        let r0 = res
            .residual_history
            .first()
            .map(|row| row.residual_norm)
            .filter(|r| r.is_finite() && *r > 0.0);
        let rf = res.solver_residual_norm;
        let metrics = Metrics {
            rho_tilde: r0.and_then(|r0| rho_tilde(r0, rf, iterations).ok()),
            rho_hat: r0.and_then(|r0| rho_hat(r0, rf, res.wall_time, exec.tau_sync).ok()),
            tau_sync_s: Some(exec.tau_sync.as_secs_f64()),
            // Exactly 1 for synchronous runs, which advance in lockstep.
            async_degree: async_degree(&res.update_counts).ok(),
        };
        Ok(Self {
            config: cfg.clone(),
            converged: res.converged,
            iterations,
            wall_time_s: res.wall_time.as_secs_f64(),
            solver_residual_norm: rf,
            true_residual_norm: res.true_residual_norm,
            update_counts: res.update_counts.clone(),
            metrics,
            audit_violations: res.audit_violations,
            coarse: res.coarse.clone(),
            environment: EnvStamp::for_workers(cfg.workers()),
        })
    }

    /// One-line human summary.
    pub fn summary(&self) -> String {
        format!(
            "{}{} n={} P={}: {} after {} iterations in {:.3} s, residual {:.3e} (true {:.3e})",
            match self.config.solver {
                crate::config::Solver::Ras => "ras",
                crate::config::Solver::Js => "js",
                crate::config::Solver::Ras2 => "ras2",
            },
            match self.config.mode {
                crate::config::Mode::Sync => "/sync",
                crate::config::Mode::Async => "/async",
                crate::config::Mode::AsyncLockEmulated => "/async-lock-emulated",
            },
            self.config.n,
            self.config.parts,
            if self.converged {
                "converged"
            } else {
                "did not converge"
            },
            self.iterations,
            self.wall_time_s,
            self.solver_residual_norm,
            self.true_residual_norm,
        )
    }
}

/// Writes the record JSON and history CSV for repeat `index` (files are
/// unsuffixed when the config asks for a single run).
pub fn write_outputs(dir: &Path, record: &RunRecord, exec: &Execution, index: u64) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let suffix = if record.config.repeats > 1 {
        format!("_{index}")
    } else {
        String::new()
    };
    let record_path = dir.join(format!("record{suffix}.json"));
    let text = serde_json::to_string_pretty(record)?;
    std::fs::write(&record_path, text)
        .with_context(|| format!("writing {}", record_path.display()))?;
    let history_path = dir.join(format!("history{suffix}.csv"));
    let mut file = std::fs::File::create(&history_path)
        .with_context(|| format!("writing {}", history_path.display()))?;
    write_history_csv(&mut file, &exec.result.residual_history)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{execute, ExperimentConfig};

    #[test]
    fn record_round_trips_through_json() {
        let cfg = ExperimentConfig {
            n: 16,
            parts: 2,
            tol: 1e-6,
            ..ExperimentConfig::default()
        };
        let exec = execute(&cfg).unwrap();
        let record = RunRecord::from_execution(&cfg, &exec).unwrap();
        assert!(record.converged);
        let text = serde_json::to_string(&record).unwrap();
        let back: RunRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(text, serde_json::to_string(&back).unwrap());
    }

    #[test]
    fn sync_runs_have_no_async_degree_and_equal_rhos() {
        let cfg = ExperimentConfig {
            n: 16,
            parts: 4,
            tol: 1e-6,
            ..ExperimentConfig::default()
        };
        let exec = execute(&cfg).unwrap();
        let record = RunRecord::from_execution(&cfg, &exec).unwrap();
        assert_eq!(record.metrics.async_degree, Some(1.0));
        // tau_sync * K == wall time for a synchronous run, so the two rates
        // agree up to Duration's nanosecond quantization of tau (which the
        // exponent amplifies by ln(r_f/r_0)).
        let tilde = record.metrics.rho_tilde.unwrap();
        let hat = record.metrics.rho_hat.unwrap();
        let rel = (hat - tilde).abs() / tilde;
        assert!(rel < 1e-4, "rho_hat vs rho_tilde: {rel}");
    }
}

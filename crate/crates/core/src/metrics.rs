//! Convergence monitoring and performance metrics.
//!
//! The residual norm of the composed iterate decomposes over subdomains as
//! `||r||^2 = sum_p r_p . (D_p r_p)`: each subdomain squares its accumulated
//! local residual over the unknowns it owns, and the sum over subdomains is
//! exact (no overlap double-counting). The [`ConvergenceMonitor`] collects
//! these contributions; in asynchronous runs a master loop refreshes the
//! global estimate periodically and workers poll it, in synchronous runs
//! every worker refreshes after the exchange barrier and obtains the same
//! bitwise sum.

use std::io::Write;
use std::sync::atomic::Ordering;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::comm::AtomicF64;
use crate::error::{Error, Result};

/// Squared contribution of one subdomain to the global residual norm:
/// the sum of `r[i]^2` over owned unknowns.
pub fn local_residual_contrib(r: &[f64], owned: &[bool]) -> f64 {
    assert_eq!(r.len(), owned.len(), "contrib: length mismatch");
    r.iter()
        .zip(owned)
        .filter(|&(_, &o)| o)
        .map(|(v, _)| v * v)
        .sum()
}

/// Shared residual-norm estimate built from per-subdomain contributions.
///
/// Cells start as NaN ("not yet published"); the estimate stays infinite
/// until every subdomain has published at least once, so a fresh run can
/// never be mistaken for a converged one.
#[derive(Debug)]
pub struct ConvergenceMonitor {
    contribs: Vec<AtomicF64>,
    estimate: AtomicF64,
    tol: f64,
}

impl ConvergenceMonitor {
    /// Monitor for `p` subdomains with absolute tolerance `tol`;
    /// `tol <= 0` disables convergence detection.
    pub fn new(p: usize, tol: f64) -> Self {
        Self {
            contribs: (0..p).map(|_| AtomicF64::new(f64::NAN)).collect(),
            estimate: AtomicF64::new(f64::INFINITY),
            tol,
        }
    }

    /// Publishes subdomain `p`'s squared contribution.
    pub fn publish(&self, p: usize, contrib: f64) {
        self.contribs[p].store(contrib, Ordering::Relaxed);
    }

    /// Recomputes the estimate from the published contributions (summed in
    /// subdomain order, so concurrent refreshes of the same data agree
    /// bitwise) and stores it. Returns the new estimate.
    pub fn refresh(&self) -> f64 {
        let sum: f64 = self
            .contribs
            .iter()
            .map(|c| c.load(Ordering::Relaxed))
            .sum();
        let norm = if sum.is_nan() {
            f64::INFINITY
        } else {
            sum.sqrt()
        };
        self.estimate.store(norm, Ordering::Release);
        norm
    }

    /// Latest stored estimate without recomputation.
    pub fn estimate(&self) -> f64 {
        self.estimate.load(Ordering::Acquire)
    }

    /// Whether the latest estimate meets the tolerance (always false when
    /// detection is disabled).
    pub fn converged(&self) -> bool {
        self.tol > 0.0 && self.estimate() <= self.tol
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }
}

/// Observed mean convergence factor per iteration:
/// `(r_final / r_0)^(1/k)` after `k` iterations.
pub fn rho_tilde(r0: f64, r_final: f64, iterations: u64) -> Result<f64> {
    if !(r0 > 0.0) || !(r_final >= 0.0) {
        return Err(Error::InvalidMetric(format!(
            "residual norms must be positive, got r0 = {r0}, r_final = {r_final}"
        )));
    }
    if iterations == 0 {
        return Err(Error::InvalidMetric("iteration count is zero".into()));
    }
    Ok((r_final / r0).powf(1.0 / iterations as f64))
}

/// Time-normalized convergence factor `(r_final / r_0)^(tau / T)`: the
/// residual reduction per synchronous-iteration-equivalent of wall time.
/// Recovers [`rho_tilde`] when `T = tau * k`.
pub fn rho_hat(r0: f64, r_final: f64, elapsed: Duration, tau_sync: Duration) -> Result<f64> {
    if !(r0 > 0.0) || !(r_final >= 0.0) {
        return Err(Error::InvalidMetric(format!(
            "residual norms must be positive, got r0 = {r0}, r_final = {r_final}"
        )));
    }
    let t = elapsed.as_secs_f64();
    let tau = tau_sync.as_secs_f64();
    if !(t > 0.0) || !(tau > 0.0) {
        return Err(Error::InvalidMetric(
            "elapsed time and tau_sync must be positive".into(),
        ));
    }
    Ok((r_final / r0).powf(tau / t))
}

/// Degree of asynchronism: the minimum over subdomains of per-worker update
/// counts divided by the maximum. 1 means perfectly balanced progress.
pub fn async_degree(update_counts: &[u64]) -> Result<f64> {
    let min = update_counts.iter().min();
    let max = update_counts.iter().max();
    match (min, max) {
        (Some(&min), Some(&max)) if max > 0 => Ok(min as f64 / max as f64),
        _ => Err(Error::InvalidMetric(
            "update counts are empty or all zero".into(),
        )),
    }
}

/// Derived metrics of one run, as serialized into run records.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Metrics {
    /// Per-iteration convergence factor (synchronous runs).
    pub rho_tilde: Option<f64>,
    /// Time-normalized convergence factor.
    pub rho_hat: Option<f64>,
    /// Mean synchronous iteration time in seconds, when known.
    pub tau_sync_s: Option<f64>,
    /// min/max update-count ratio (asynchronous runs).
    pub async_degree: Option<f64>,
}

/// One sample of a residual or error history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    /// Iteration count (synchronous) or sample index (asynchronous).
    pub step: u64,
    /// Seconds since the solve started.
    pub time_s: f64,
    /// Residual norm estimate at this sample.
    pub residual_norm: f64,
    /// Max-norm error against the exact discrete solution, when measured.
    pub true_error: Option<f64>,
}

/// Writes a history as CSV (`step,time_s,residual_norm[,true_error]`); the
/// error column appears when the first row carries one.
pub fn write_history_csv<W: Write>(w: &mut W, rows: &[HistoryRow]) -> Result<()> {
    let with_error = rows.first().is_some_and(|r| r.true_error.is_some());
    if with_error {
        writeln!(w, "step,time_s,residual_norm,true_error")?;
    } else {
        writeln!(w, "step,time_s,residual_norm")?;
    }
    for row in rows {
        if with_error {
            writeln!(
                w,
                "{},{:.9},{:.17e},{:.17e}",
                row.step,
                row.time_s,
                row.residual_norm,
                row.true_error.unwrap_or(f64::NAN)
            )?;
        } else {
            writeln!(
                w,
                "{},{:.9},{:.17e}",
                row.step, row.time_s, row.residual_norm
            )?;
        }
    }
    Ok(())
}

/// A solver run that the stop-and-repeat protocol can re-execute from the
/// same initial state. Implementations must be deterministic in their
/// configuration (fresh state per call), not in their timing.
pub trait RepeatableRun {
    /// Runs exactly `iterations` iterations from the initial state and
    /// returns the wall time spent iterating.
    fn run_for_iterations(&mut self, iterations: u64) -> Result<Duration>;

    /// Runs from the initial state under a wall-clock budget and returns the
    /// max-norm error of the result against the exact discrete solution.
    fn run_for_budget(&mut self, budget: Duration) -> Result<f64>;
}

/// Error-vs-time samples produced by [`stop_and_repeat`].
#[derive(Debug, Clone)]
pub struct StopAndRepeatReport {
    /// Estimated per-iteration cost from the discarded warm-up.
    pub alpha: Duration,
    /// `(repeat index, budget, max-norm error)` per repetition.
    pub samples: Vec<(u64, Duration, f64)>,
    /// Whether the error dropped to `epsilon` within the allowed repeats.
    pub reached: bool,
}

impl StopAndRepeatReport {
    /// The samples as history rows (time = budget, error in both columns'
    /// final position).
    pub fn history(&self) -> Vec<HistoryRow> {
        self.samples
            .iter()
            .map(|&(r, budget, err)| HistoryRow {
                step: r,
                time_s: budget.as_secs_f64(),
                residual_norm: err,
                true_error: Some(err),
            })
            .collect()
    }
}

/// Measures error as a function of wall time for solvers without
/// deterministic iterates: estimate the per-iteration cost `alpha` from
/// `discard` warm-up iterations (whose result is thrown away), then rerun
/// the solver from scratch under growing budgets `r * alpha` for
/// `r = 1, 2, ...`, recording the final error of each repetition, until the
/// error reaches `epsilon` or `max_repeats` is exhausted.
pub fn stop_and_repeat(
    run: &mut dyn RepeatableRun,
    epsilon: f64,
    discard: u64,
    max_repeats: u64,
) -> Result<StopAndRepeatReport> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidMetric(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if discard == 0 || max_repeats == 0 {
        return Err(Error::InvalidMetric(
            "discard and max_repeats must be positive".into(),
        ));
    }
    let warmup = run.run_for_iterations(discard)?;
    let alpha = warmup / u32::try_from(discard).unwrap_or(u32::MAX);
    let mut samples = Vec::new();
    let mut reached = false;
    for r in 1..=max_repeats {
        let budget = alpha * u32::try_from(r).unwrap_or(u32::MAX);
        let err = run.run_for_budget(budget)?;
        samples.push((r, budget, err));
        if err <= epsilon {
            reached = true;
            break;
        }
    }
    Ok(StopAndRepeatReport {
        alpha,
        samples,
        reached,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contrib_squares_owned_entries_only() {
        let r = [1.0, -2.0, 3.0, 4.0];
        let owned = [true, false, true, false];
        assert_eq!(local_residual_contrib(&r, &owned), 10.0);
    }

    #[test]
    fn monitor_estimate_requires_all_contributions() {
        let m = ConvergenceMonitor::new(3, 1e-6);
        assert_eq!(m.refresh(), f64::INFINITY);
        m.publish(0, 4.0);
        m.publish(2, 9.0);
        assert_eq!(m.refresh(), f64::INFINITY);
        assert!(!m.converged());
        m.publish(1, 12.0);
        assert_eq!(m.refresh(), 5.0);
        assert!(!m.converged());
        m.publish(0, 0.0);
        m.publish(1, 0.0);
        m.publish(2, 0.0);
        m.refresh();
        assert!(m.converged());
    }

    #[test]
    fn disabled_tolerance_never_converges() {
        let m = ConvergenceMonitor::new(1, 0.0);
        m.publish(0, 0.0);
        m.refresh();
        assert!(!m.converged());
    }

    #[test]
    fn rho_tilde_examples() {
        // Reducing the residual by 1e6 over 60 iterations: 10^(-0.1) each.
        let rho = rho_tilde(1.0, 1e-6, 60).unwrap();
        assert!((rho - 10f64.powf(-0.1)).abs() < 1e-15);
        assert!(rho_tilde(0.0, 1.0, 5).is_err());
        assert!(rho_tilde(1.0, 1e-6, 0).is_err());
    }

    #[test]
    fn rho_hat_recovers_rho_tilde_for_synchronous_time() {
        let (r0, rf, k) = (50.0, 1e-4, 37u64);
        let tau = Duration::from_micros(850);
        let rho_t = rho_tilde(r0, rf, k).unwrap();
        let rho_h = rho_hat(r0, rf, tau * k as u32, tau).unwrap();
        assert!((rho_t - rho_h).abs() < 1e-12);
    }

    #[test]
    fn async_degree_is_min_over_max() {
        assert_eq!(async_degree(&[11_000, 16_000]).unwrap(), 0.6875);
        assert_eq!(async_degree(&[500, 500, 500]).unwrap(), 1.0);
        assert!(async_degree(&[]).is_err());
        assert!(async_degree(&[0, 0]).is_err());
    }

    #[test]
    fn history_csv_shapes() {
        let rows = vec![
            HistoryRow {
                step: 0,
                time_s: 0.001,
                residual_norm: 12.5,
                true_error: None,
            },
            HistoryRow {
                step: 1,
                time_s: 0.002,
                residual_norm: 3.25,
                true_error: None,
            },
        ];
        let mut buf = Vec::new();
        write_history_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,time_s,residual_norm");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,0.001"));

        let rows = vec![HistoryRow {
            step: 3,
            time_s: 0.5,
            residual_norm: 1e-3,
            true_error: Some(2e-5),
        }];
        let mut buf = Vec::new();
        write_history_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,time_s,residual_norm,true_error"));
        assert_eq!(text.lines().count(), 2);
    }

    struct FakeRun {
        /// Error after a given number of whole iterations.
        per_iter: Duration,
        start_error: f64,
        factor: f64,
    }

    impl RepeatableRun for FakeRun {
        fn run_for_iterations(&mut self, iterations: u64) -> Result<Duration> {
            Ok(self.per_iter * u32::try_from(iterations).unwrap())
        }
        fn run_for_budget(&mut self, budget: Duration) -> Result<f64> {
            let iters = (budget.as_secs_f64() / self.per_iter.as_secs_f64()).floor();
            Ok(self.start_error * self.factor.powf(iters))
        }
    }

    #[test]
    fn stop_and_repeat_walks_growing_budgets() {
        let mut run = FakeRun {
            per_iter: Duration::from_millis(2),
            start_error: 1.0,
            factor: 0.1,
        };
        let report = stop_and_repeat(&mut run, 5e-4, 5, 100).unwrap();
        assert_eq!(report.alpha, Duration::from_millis(2));
        // Budget r * alpha allows r iterations: error 10^-r; 1e-4 <= 5e-4
        // first at r = 4.
        assert_eq!(report.samples.len(), 4);
        assert!(report.reached);
        let last = report.samples.last().unwrap();
        assert_eq!(last.0, 4);
        assert!((last.2 - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn stop_and_repeat_reports_exhaustion() {
        let mut run = FakeRun {
            per_iter: Duration::from_millis(1),
            start_error: 1.0,
            factor: 0.99,
        };
        let report = stop_and_repeat(&mut run, 1e-9, 5, 7).unwrap();
        assert_eq!(report.samples.len(), 7);
        assert!(!report.reached);
    }
}

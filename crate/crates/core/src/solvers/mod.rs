//! Overlapping Schwarz solvers over the emulated one-sided communication
//! layer.
//!
//! Six entry points cover the cross product of three methods and two
//! execution modes:
//!
//! * [`ras_sync`] / [`ras_async`] — restricted additive Schwarz (each
//!   subdomain publishes its owner-masked local residual),
//! * [`js_sync`] / [`js_async`] — Jacobi-Schwarz (each subdomain keeps its
//!   full local residual and receives owner-masked exterior values),
//! * [`two_level_sync`] / [`two_level_async`] — RAS plus an additively
//!   combined coarse-grid correction driven by a dedicated coarse worker.
//!
//! All six run the same per-update arithmetic through a shared engine; the
//! synchronous variants order it with barriers, the asynchronous ones with
//! free-running threads (or a deterministic round-robin scheduler for
//! replay testing, under which an asynchronous run reproduces the
//! synchronous trajectory bitwise).

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::comm::SchedMode;
use crate::decomp::CoarseSpace;
use crate::decomp::{Decomposition, JsPartition};
use crate::error::{Error, Result};
use crate::fem::DiscreteProblem;
use crate::linalg::CsrMatrix;
use crate::metrics::HistoryRow;

mod engine;

use engine::RunConfig;

/// The solver family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    /// One-level restricted additive Schwarz.
    Ras,
    /// One-level Jacobi-Schwarz.
    JacobiSchwarz,
    /// Two-level RAS with additive coarse correction.
    TwoLevelRas,
}

impl SolverKind {
    /// Damping applied to the subdomain update (`1` for one-level methods,
    /// `1/2` when a coarse correction is combined additively).
    pub fn damping(self) -> f64 {
        match self {
            SolverKind::TwoLevelRas => 0.5,
            _ => 1.0,
        }
    }
}

/// Execution controls shared by all solver entry points.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Absolute tolerance on the residual norm; `<= 0` disables convergence
    /// detection (the run ends on the iteration or time limit).
    pub tol: f64,
    /// Maximum number of local updates per subdomain.
    pub max_iterations: u64,
    /// Wall-clock budget for the whole solve.
    pub max_time: Duration,
    /// Scheduling of asynchronous runs (ignored by synchronous ones).
    pub scheduler: SchedMode,
    /// Record the local iterate after every update (for replay comparisons).
    pub record_trajectory: bool,
    /// Track every value written to the exchange windows and flag reads that
    /// observe a value nobody wrote.
    pub audit_exchanges: bool,
    /// Emulated per-access cost of lock-based window synchronization: when
    /// set, every window put/get in the solver loop sleeps this long first.
    pub access_delay: Option<Duration>,
    /// How often the asynchronous monitor refreshes the global residual
    /// estimate.
    pub monitor_cadence: Duration,
    /// Timeout for barriers and scheduler turns; hitting it aborts the run
    /// with an error instead of hanging.
    pub collective_timeout: Duration,
}

impl SolveOptions {
    /// Defaults for a solver kind: tolerance `1e-6`, iteration cap `100_000`
    /// (one-level) or `10_000` (two-level), time budget 300 s, free-running
    /// scheduler, 1 ms monitor cadence, 60 s collective timeout.
    pub fn new(kind: SolverKind) -> Self {
        Self {
            tol: 1e-6,
            max_iterations: match kind {
                SolverKind::TwoLevelRas => 10_000,
                _ => 100_000,
            },
            max_time: Duration::from_secs(300),
            scheduler: SchedMode::FreeRun,
            record_trajectory: false,
            audit_exchanges: false,
            access_delay: None,
            monitor_cadence: Duration::from_millis(1),
            collective_timeout: Duration::from_secs(60),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.tol.is_nan() {
            return Err(Error::InvalidConfig("tol is NaN".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if self.max_time.is_zero() {
            return Err(Error::InvalidConfig("max_time must be positive".into()));
        }
        if self.monitor_cadence.is_zero() {
            return Err(Error::InvalidConfig(
                "monitor_cadence must be positive".into(),
            ));
        }
        if self.collective_timeout.is_zero() {
            return Err(Error::InvalidConfig(
                "collective_timeout must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Activity counters of the coarse worker.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoarseStats {
    /// Times the coarse worker checked whether all contributions arrived.
    pub poll_attempts: u64,
    /// Coarse solves actually performed.
    pub solves: u64,
    /// Corrections applied, per subdomain.
    pub corrections_applied: Vec<u64>,
    /// Poll interval at the end of the run (adaptive in free-run mode).
    pub final_sleep: Duration,
}

/// Outcome of a solve.
#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Composed global solution `u = sum_p R_p^T D_p w_p`.
    pub u: Vec<f64>,
    /// Post-processed local solutions `u_p = R_p u` (consistent on
    /// overlaps, unlike the raw iterates).
    pub local_solutions: Vec<Vec<f64>>,
    /// Updates performed by each subdomain worker.
    pub update_counts: Vec<u64>,
    /// Iteration count of a synchronous run (`None` for asynchronous).
    pub sync_iterations: Option<u64>,
    /// Total wall time of the solve.
    pub wall_time: Duration,
    /// Residual-norm samples: one per iteration (synchronous) or one per
    /// monitor refresh (asynchronous).
    pub residual_history: Vec<HistoryRow>,
    /// Final residual estimate from the published contributions.
    pub solver_residual_norm: f64,
    /// Recomputed `||f - A u||` of the returned solution.
    pub true_residual_norm: f64,
    /// Whether the tolerance was met.
    pub converged: bool,
    /// Window reads that observed a value nobody wrote (audited runs).
    pub audit_violations: u64,
    /// Coarse worker counters (two-level runs).
    pub coarse: Option<CoarseStats>,
    /// Per-subdomain iterate after every update, when recorded.
    pub trajectories: Option<Vec<Vec<Vec<f64>>>>,
}

/// Local residual operation `t = D f - A (D w)` with a boolean mask as `D`.
pub fn local_residual(a: &CsrMatrix, f: &[f64], w: &[f64], mask: &[bool], t: &mut [f64]) {
    assert_eq!(f.len(), a.nrows(), "local_residual: rhs length");
    assert_eq!(t.len(), a.nrows(), "local_residual: output length");
    a.spmv_masked_into(w, mask, t);
    for i in 0..t.len() {
        let fi = if mask[i] { f[i] } else { 0.0 };
        t[i] = fi - t[i];
    }
}

/// Composes local iterates into the global solution through the boolean
/// partition of unity and restricts it back to every subdomain. Returns
/// `(u, [R_p u])`.
pub fn post_process(decomp: &Decomposition, w: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(
        w.len(),
        decomp.n_subdomains(),
        "post_process: iterate count"
    );
    let mut u = vec![0.0; decomp.n_global];
    for (map, wp) in decomp.maps.iter().zip(w) {
        assert_eq!(wp.len(), map.len(), "post_process: iterate length");
        for (l, &g) in map.overlap.iter().enumerate() {
            if map.owner[l] == map.p {
                u[g] += wp[l];
            }
        }
    }
    let locals = decomp
        .maps
        .iter()
        .map(|map| map.overlap.iter().map(|&g| u[g]).collect())
        .collect();
    (u, locals)
}

/// Whether spawning `workers` threads oversubscribes the visible hardware
/// parallelism (used to downgrade timing-sensitive claims, not to refuse
/// to run).
pub fn hardware_oversubscribed(workers: usize) -> bool {
    std::thread::available_parallelism()
        .map(|n| n.get() < workers)
        .unwrap_or(true)
}

/// Shortest poll interval of the adaptive coarse-worker sleep.
pub const SLEEP_MIN: Duration = Duration::from_micros(10);
/// Longest poll interval of the adaptive coarse-worker sleep.
pub const SLEEP_MAX: Duration = Duration::from_millis(100);
/// Attempts per adaptation window.
const SLEEP_WINDOW: u32 = 50;
/// Success-rate threshold the adaptation steers toward.
const SLEEP_TARGET: f64 = 1.0 / 20.0;
/// Multiplicative step of each adaptation.
const SLEEP_FACTOR: f64 = 1.5;

/// Adaptive sleep controller of the free-running coarse worker: every 50
/// poll attempts, if more than 1 in 20 performed a solve the interval
/// shrinks by 1.5x (contributions arrive faster than we poll), if fewer it
/// grows by 1.5x, clamped to `[SLEEP_MIN, SLEEP_MAX]`.
#[derive(Debug, Clone)]
pub struct SleepController {
    interval: Duration,
    attempts: u64,
    solves: u64,
    window_attempts: u32,
    window_solves: u32,
}

impl SleepController {
    pub fn new(initial: Duration) -> Self {
        Self {
            interval: initial.clamp(SLEEP_MIN, SLEEP_MAX),
            attempts: 0,
            solves: 0,
            window_attempts: 0,
            window_solves: 0,
        }
    }

    /// Records one poll attempt and adapts the interval at window
    /// boundaries.
    pub fn record(&mut self, performed: bool) {
        self.attempts += 1;
        self.window_attempts += 1;
        if performed {
            self.solves += 1;
            self.window_solves += 1;
        }
        if self.window_attempts == SLEEP_WINDOW {
            let ratio = f64::from(self.window_solves) / f64::from(self.window_attempts);
            let secs = self.interval.as_secs_f64();
            let adapted = if ratio > SLEEP_TARGET {
                secs / SLEEP_FACTOR
            } else if ratio < SLEEP_TARGET {
                secs * SLEEP_FACTOR
            } else {
                secs
            };
            self.interval = Duration::from_secs_f64(adapted).clamp(SLEEP_MIN, SLEEP_MAX);
            self.window_attempts = 0;
            self.window_solves = 0;
        }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    pub fn attempts(&self) -> u64 {
        self.attempts
    }

    pub fn solves(&self) -> u64 {
        self.solves
    }
}

impl Default for SleepController {
    fn default() -> Self {
        Self::new(Duration::from_millis(1))
    }
}

/// Synchronous restricted additive Schwarz.
pub fn ras_sync(
    problem: &DiscreteProblem,
    decomp: &Decomposition,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    opts.validate()?;
    engine::run(RunConfig {
        kind: SolverKind::Ras,
        sync: true,
        problem,
        decomp,
        js: None,
        coarse: None,
        opts,
    })
}

/// Asynchronous restricted additive Schwarz.
pub fn ras_async(
    problem: &DiscreteProblem,
    decomp: &Decomposition,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    opts.validate()?;
    engine::run(RunConfig {
        kind: SolverKind::Ras,
        sync: false,
        problem,
        decomp,
        js: None,
        coarse: None,
        opts,
    })
}

/// Synchronous Jacobi-Schwarz.
pub fn js_sync(
    problem: &DiscreteProblem,
    decomp: &Decomposition,
    js: &[JsPartition],
    opts: &SolveOptions,
) -> Result<SolveResult> {
    opts.validate()?;
    check_js(decomp, js)?;
    engine::run(RunConfig {
        kind: SolverKind::JacobiSchwarz,
        sync: true,
        problem,
        decomp,
        js: Some(js),
        coarse: None,
        opts,
    })
}

/// Asynchronous Jacobi-Schwarz.
pub fn js_async(
    problem: &DiscreteProblem,
    decomp: &Decomposition,
    js: &[JsPartition],
    opts: &SolveOptions,
) -> Result<SolveResult> {
    opts.validate()?;
    check_js(decomp, js)?;
    engine::run(RunConfig {
        kind: SolverKind::JacobiSchwarz,
        sync: false,
        problem,
        decomp,
        js: Some(js),
        coarse: None,
        opts,
    })
}

/// Synchronous two-level RAS with an additive coarse correction.
pub fn two_level_sync(
    problem: &DiscreteProblem,
    decomp: &Decomposition,
    coarse: &CoarseSpace,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    opts.validate()?;
    check_coarse(decomp, coarse)?;
    engine::run(RunConfig {
        kind: SolverKind::TwoLevelRas,
        sync: true,
        problem,
        decomp,
        js: None,
        coarse: Some(coarse),
        opts,
    })
}

/// Asynchronous two-level RAS with a dedicated coarse worker.
pub fn two_level_async(
    problem: &DiscreteProblem,
    decomp: &Decomposition,
    coarse: &CoarseSpace,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    opts.validate()?;
    check_coarse(decomp, coarse)?;
    engine::run(RunConfig {
        kind: SolverKind::TwoLevelRas,
        sync: false,
        problem,
        decomp,
        js: None,
        coarse: Some(coarse),
        opts,
    })
}

fn check_js(decomp: &Decomposition, js: &[JsPartition]) -> Result<()> {
    if js.len() != decomp.n_subdomains() {
        return Err(Error::InvalidConfig(format!(
            "expected {} mask families, got {}",
            decomp.n_subdomains(),
            js.len()
        )));
    }
    Ok(())
}

fn check_coarse(decomp: &Decomposition, coarse: &CoarseSpace) -> Result<()> {
    if coarse.links.len() != decomp.n_subdomains() {
        return Err(Error::InvalidConfig(format!(
            "coarse space has {} links for {} subdomains",
            coarse.links.len(),
            decomp.n_subdomains()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::{build_js_partitions, extend_overlap, partition_rectangular};
    use crate::fem::{assemble, Mesh};
    use crate::linalg::{max_abs_diff, norm2};
    use crate::reference;

    fn setup(n: usize, px: usize, py: usize, depth: usize) -> (DiscreteProblem, Decomposition) {
        let mesh = Mesh::unit_square(n).unwrap();
        let problem = assemble(&mesh).unwrap();
        let base = partition_rectangular(&mesh, px, py, 1.0).unwrap();
        let decomp = extend_overlap(&problem.matrix, &base, depth).unwrap();
        (problem, decomp)
    }

    #[test]
    fn local_residual_matches_manual_formula() {
        let (problem, decomp) = setup(8, 2, 2, 1);
        let map = &decomp.maps[2];
        let a_p = crate::decomp::local_matrix(&problem.matrix, map).unwrap();
        let f_p: Vec<f64> = map.overlap.iter().map(|&g| problem.rhs[g]).collect();
        let mask = map.owned_mask();
        let w: Vec<f64> = (0..map.len()).map(|i| 0.3 + 0.01 * i as f64).collect();
        let mut t = vec![0.0; map.len()];
        local_residual(&a_p, &f_p, &w, &mask, &mut t);
        for i in 0..map.len() {
            let (cols, vals) = a_p.row(i);
            let mut aw = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                if mask[j] {
                    aw += v * w[j];
                }
            }
            let expect = if mask[i] { f_p[i] } else { 0.0 } - aw;
            assert!((t[i] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn post_process_composes_through_partition_of_unity() {
        let (problem, decomp) = setup(8, 2, 2, 2);
        // Take local restrictions of a known global vector; composing them
        // must recover it exactly, and the local solutions its restrictions.
        let n = problem.n_unknowns();
        let global: Vec<f64> = (0..n).map(|g| (g as f64).sin()).collect();
        let w: Vec<Vec<f64>> = decomp
            .maps
            .iter()
            .map(|m| m.overlap.iter().map(|&g| global[g]).collect())
            .collect();
        let (u, locals) = post_process(&decomp, &w);
        assert_eq!(u, global);
        for (map, up) in decomp.maps.iter().zip(&locals) {
            for (l, &g) in map.overlap.iter().enumerate() {
                assert_eq!(up[l], global[g]);
            }
        }
    }

    #[test]
    fn sleep_controller_adapts_in_both_directions() {
        let mut c = SleepController::new(Duration::from_millis(1));
        // Every poll performs a solve: ratio 1 > 1/20, interval shrinks.
        for _ in 0..50 {
            c.record(true);
        }
        let shrunk = c.interval();
        assert!(shrunk < Duration::from_millis(1));
        assert!((shrunk.as_secs_f64() - 1e-3 / 1.5).abs() < 1e-9);
        // No poll performs a solve: grows again.
        for _ in 0..50 {
            c.record(false);
        }
        assert!((c.interval().as_secs_f64() - 1e-3).abs() < 1e-9);
        assert_eq!(c.attempts(), 100);
        assert_eq!(c.solves(), 50);
        // Clamping at both ends.
        let mut c = SleepController::new(SLEEP_MIN);
        for _ in 0..50 {
            c.record(true);
        }
        assert_eq!(c.interval(), SLEEP_MIN);
        let mut c = SleepController::new(SLEEP_MAX);
        for _ in 0..50 {
            c.record(false);
        }
        assert_eq!(c.interval(), SLEEP_MAX);
    }

    #[test]
    fn single_subdomain_ras_is_a_direct_solve() {
        let (problem, decomp) = setup(6, 1, 1, 1);
        let opts = SolveOptions {
            tol: 1e-12,
            ..SolveOptions::new(SolverKind::Ras)
        };
        let res = ras_sync(&problem, &decomp, &opts).unwrap();
        assert!(res.converged);
        assert_eq!(res.sync_iterations, Some(1));
        assert!(res.true_residual_norm < 1e-12);
        let direct = reference::DenseMat::from_csr(&problem.matrix);
        let exact = reference::gauss_solve(&direct, &problem.rhs).unwrap();
        for (a, b) in res.u.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn ras_sync_matches_dense_preconditioned_richardson() {
        let (problem, decomp) = setup(8, 2, 2, 1);
        let opts = SolveOptions {
            tol: 0.0,
            max_iterations: 5,
            record_trajectory: true,
            ..SolveOptions::new(SolverKind::Ras)
        };
        let res = ras_sync(&problem, &decomp, &opts).unwrap();
        assert_eq!(res.sync_iterations, Some(5));
        let m_inv = reference::ras_preconditioner_dense(&problem.matrix, &decomp).unwrap();
        let traj = reference::richardson_trajectory(&problem.matrix, &problem.rhs, &m_inv, 1.0, 5);
        let diff = max_abs_diff(&res.u, traj.last().unwrap());
        assert!(diff < 1e-11, "RAS vs dense Richardson diff {diff}");
    }

    #[test]
    fn ras_converges_and_reports_consistent_norms() {
        let (problem, decomp) = setup(16, 2, 2, 2);
        let opts = SolveOptions {
            tol: 1e-8,
            ..SolveOptions::new(SolverKind::Ras)
        };
        let res = ras_sync(&problem, &decomp, &opts).unwrap();
        assert!(res.converged);
        assert!(res.solver_residual_norm <= 1e-8);
        assert!(res.true_residual_norm <= 1e-8 * 1.0001);
        // The recorded history starts at the initial residual norm ||f||.
        let first = &res.residual_history[0];
        assert_eq!(first.step, 0);
        assert!((first.residual_norm - norm2(&problem.rhs)).abs() < 1e-12);
        // Monotone decrease for this SPD model problem.
        for pair in res.residual_history.windows(2) {
            assert!(pair[1].residual_norm <= pair[0].residual_norm * 1.0001);
        }
    }

    #[test]
    fn js_sync_matches_dense_sweeps() {
        let (problem, decomp) = setup(8, 2, 2, 1);
        let js = build_js_partitions(&decomp);
        let opts = SolveOptions {
            tol: 0.0,
            max_iterations: 4,
            record_trajectory: true,
            ..SolveOptions::new(SolverKind::JacobiSchwarz)
        };
        let res = js_sync(&problem, &decomp, &js, &opts).unwrap();
        let sweeps =
            reference::js_stacked_sweeps(&problem.matrix, &problem.rhs, &decomp, 4).unwrap();
        let traj = res.trajectories.as_ref().unwrap();
        for p in 0..decomp.n_subdomains() {
            let got = traj[p].last().unwrap();
            let want = &sweeps.last().unwrap()[p];
            let diff = max_abs_diff(got, want);
            assert!(diff < 1e-11, "subdomain {p} diff {diff}");
        }
    }

    #[test]
    fn js_locals_diverge_from_ras_but_compose_identically() {
        // The two methods produce the same local iterates on the first
        // sweep. From the second sweep on the local iterates differ on the
        // overlaps (Jacobi-Schwarz keeps its own halo values), yet the
        // owner-masked composition cancels exactly that difference, so the
        // composed solutions still agree to roundoff.
        let (problem, decomp) = setup(8, 2, 2, 1);
        let js = build_js_partitions(&decomp);
        let run = |k: u64, kind: SolverKind| {
            let opts = SolveOptions {
                tol: 0.0,
                max_iterations: k,
                record_trajectory: true,
                ..SolveOptions::new(kind)
            };
            match kind {
                SolverKind::Ras => ras_sync(&problem, &decomp, &opts).unwrap(),
                SolverKind::JacobiSchwarz => js_sync(&problem, &decomp, &js, &opts).unwrap(),
                _ => unreachable!(),
            }
        };
        let ras1 = run(1, SolverKind::Ras);
        let js1 = run(1, SolverKind::JacobiSchwarz);
        for p in 0..decomp.n_subdomains() {
            let d = max_abs_diff(
                &ras1.trajectories.as_ref().unwrap()[p][0],
                &js1.trajectories.as_ref().unwrap()[p][0],
            );
            assert!(d < 1e-15, "first local iterates differ on {p} by {d}");
        }
        let ras2 = run(2, SolverKind::Ras);
        let js2 = run(2, SolverKind::JacobiSchwarz);
        let local_gap = (0..decomp.n_subdomains())
            .map(|p| {
                max_abs_diff(
                    &ras2.trajectories.as_ref().unwrap()[p][1],
                    &js2.trajectories.as_ref().unwrap()[p][1],
                )
            })
            .fold(0.0f64, f64::max);
        assert!(
            local_gap > 1e-3,
            "second local iterates should differ on the halos, gap {local_gap}"
        );
        let composed_gap = max_abs_diff(&ras2.u, &js2.u);
        assert!(
            composed_gap < 1e-12,
            "composed second iterates should agree, gap {composed_gap}"
        );
    }

    #[test]
    fn two_level_sync_matches_dense_trajectory() {
        let (problem, decomp) = setup(16, 2, 2, 1);
        let coarse = crate::decomp::build_coarse(&problem, &decomp, 2).unwrap();
        let opts = SolveOptions {
            tol: 0.0,
            max_iterations: 4,
            ..SolveOptions::new(SolverKind::TwoLevelRas)
        };
        let res = two_level_sync(&problem, &decomp, &coarse, &opts).unwrap();
        let traj = reference::two_level_trajectory(
            &problem.matrix,
            &problem.rhs,
            &decomp,
            &coarse.restriction,
            4,
        )
        .unwrap();
        let diff = max_abs_diff(&res.u, traj.last().unwrap());
        assert!(diff < 1e-11, "two-level vs dense diff {diff}");
        let stats = res.coarse.unwrap();
        assert_eq!(stats.solves, 4 + 1);
        assert!(stats.corrections_applied.iter().all(|&c| c == 4));
    }

    #[test]
    fn two_level_converges_faster_than_one_level() {
        let (problem, decomp) = setup(24, 2, 2, 1);
        let coarse = crate::decomp::build_coarse(&problem, &decomp, 4).unwrap();
        let tol = 1e-7;
        let one = ras_sync(
            &problem,
            &decomp,
            &SolveOptions {
                tol,
                ..SolveOptions::new(SolverKind::Ras)
            },
        )
        .unwrap();
        let two = two_level_sync(
            &problem,
            &decomp,
            &coarse,
            &SolveOptions {
                tol,
                ..SolveOptions::new(SolverKind::TwoLevelRas)
            },
        )
        .unwrap();
        assert!(one.converged && two.converged);
        assert!(
            two.sync_iterations.unwrap() < one.sync_iterations.unwrap(),
            "two-level {} vs one-level {}",
            two.sync_iterations.unwrap(),
            one.sync_iterations.unwrap()
        );
    }

    #[test]
    fn async_free_run_converges_to_same_solution() {
        let (problem, decomp) = setup(12, 2, 2, 2);
        let opts = SolveOptions {
            tol: 1e-9,
            ..SolveOptions::new(SolverKind::Ras)
        };
        let res = ras_async(&problem, &decomp, &opts).unwrap();
        assert!(res.converged, "free-run RAS did not converge");
        assert!(res.true_residual_norm < 1e-6);
        assert!(res.sync_iterations.is_none());
        assert!(res.update_counts.iter().all(|&c| c > 0));
        let direct = reference::DenseMat::from_csr(&problem.matrix);
        let exact = reference::gauss_solve(&direct, &problem.rhs).unwrap();
        let diff = max_abs_diff(&res.u, &exact);
        assert!(diff < 1e-5, "async solution error {diff}");
    }

    #[test]
    fn round_robin_async_reproduces_sync_ras_bitwise() {
        let (problem, decomp) = setup(8, 2, 2, 1);
        let mk = |sched| SolveOptions {
            tol: 0.0,
            max_iterations: 6,
            record_trajectory: true,
            scheduler: sched,
            ..SolveOptions::new(SolverKind::Ras)
        };
        let sync = ras_sync(&problem, &decomp, &mk(SchedMode::FreeRun)).unwrap();
        let replay = ras_async(&problem, &decomp, &mk(SchedMode::RoundRobin)).unwrap();
        assert_eq!(replay.update_counts, vec![6; 4]);
        assert_eq!(
            sync.trajectories.as_ref().unwrap(),
            replay.trajectories.as_ref().unwrap(),
            "round-robin replay diverged from the synchronous trajectory"
        );
        assert_eq!(sync.u, replay.u);
    }

    #[test]
    fn round_robin_async_reproduces_sync_two_level_bitwise() {
        let (problem, decomp) = setup(16, 2, 2, 1);
        let coarse = crate::decomp::build_coarse(&problem, &decomp, 2).unwrap();
        let mk = |sched| SolveOptions {
            tol: 0.0,
            max_iterations: 5,
            record_trajectory: true,
            scheduler: sched,
            ..SolveOptions::new(SolverKind::TwoLevelRas)
        };
        let sync = two_level_sync(&problem, &decomp, &coarse, &mk(SchedMode::FreeRun)).unwrap();
        let replay =
            two_level_async(&problem, &decomp, &coarse, &mk(SchedMode::RoundRobin)).unwrap();
        assert_eq!(
            sync.trajectories.as_ref().unwrap(),
            replay.trajectories.as_ref().unwrap(),
            "two-level round-robin replay diverged"
        );
        assert_eq!(sync.u, replay.u);
    }

    #[test]
    fn audit_passes_on_clean_runs() {
        let (problem, decomp) = setup(8, 2, 2, 1);
        let opts = SolveOptions {
            tol: 1e-6,
            audit_exchanges: true,
            ..SolveOptions::new(SolverKind::Ras)
        };
        let res = ras_async(&problem, &decomp, &opts).unwrap();
        assert_eq!(res.audit_violations, 0);
    }

    #[test]
    fn iteration_cap_stops_without_convergence() {
        let (problem, decomp) = setup(16, 2, 2, 1);
        let opts = SolveOptions {
            tol: 1e-14,
            max_iterations: 3,
            ..SolveOptions::new(SolverKind::Ras)
        };
        let res = ras_sync(&problem, &decomp, &opts).unwrap();
        assert!(!res.converged);
        assert_eq!(res.sync_iterations, Some(3));
        assert_eq!(res.update_counts, vec![3; 4]);
    }

    #[test]
    fn invalid_options_are_rejected() {
        let (problem, decomp) = setup(6, 1, 1, 1);
        let mut opts = SolveOptions::new(SolverKind::Ras);
        opts.max_iterations = 0;
        assert!(ras_sync(&problem, &decomp, &opts).is_err());
        let mut opts = SolveOptions::new(SolverKind::Ras);
        opts.tol = f64::NAN;
        assert!(ras_sync(&problem, &decomp, &opts).is_err());
    }
}

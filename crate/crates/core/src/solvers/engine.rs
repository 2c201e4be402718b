//! Shared execution engine behind the solver entry points.
//!
//! Every method/mode combination runs the same three per-update steps:
//!
//! 1. **publish** — compute the masked local residual `t = D f - A (D w)`
//!    and put its shared slices into the neighbor windows (two-level runs
//!    also put the compressed coarse contribution when the coarse worker
//!    has consumed the previous one),
//! 2. **accumulate** — read the incoming regions, scatter-add them onto the
//!    own local residual, and publish the owner-masked squared norm
//!    contribution,
//! 3. **update** — solve the local problem and add the damped correction
//!    (plus half the coarse correction when one is waiting).
//!
//! Synchronous runs order the steps with two barriers per iteration, so the
//! residual-norm contributions every worker sums after the second barrier
//! are identical and all workers break in lockstep. Asynchronous runs wrap
//! the steps in scheduler turns: free-run mode grants them immediately
//! (true chaotic relaxation), round-robin mode serializes them in phase
//! order, which reproduces the synchronous trajectory bitwise.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use crate::comm::plan::{
    build_plans, gather, receive_region, scatter_add, send_region, ExchangeAudit, ExchangePlan,
};
use crate::comm::scheduler::{Participant, SchedMode, Scheduler, Turn};
use crate::comm::{FlagArray, TimeoutBarrier, Window};
use crate::decomp::CoarseSpace;
use crate::decomp::{local_matrix, Decomposition, JsPartition};
use crate::error::{Error, Result};
use crate::fem::DiscreteProblem;
use crate::linalg::{axpy, ensure_finite, CsrMatrix, LuOrdering, SparseLu};
use crate::metrics::{local_residual_contrib, ConvergenceMonitor, HistoryRow};
use crate::solvers::{
    local_residual, post_process, CoarseStats, SleepController, SolveOptions, SolveResult,
    SolverKind,
};

/// Fully specified solver run.
pub(crate) struct RunConfig<'a> {
    pub kind: SolverKind,
    pub sync: bool,
    pub problem: &'a DiscreteProblem,
    pub decomp: &'a Decomposition,
    pub js: Option<&'a [JsPartition]>,
    pub coarse: Option<&'a CoarseSpace>,
    pub opts: &'a SolveOptions,
}

/// Immutable per-subdomain data prepared before the workers start.
struct WorkerCtx {
    p: usize,
    a_p: CsrMatrix,
    lu: SparseLu,
    f_p: Vec<f64>,
    owned: Vec<bool>,
    /// Mask of the residual kept locally: the owned unknowns for RAS, all
    /// local unknowns for Jacobi-Schwarz.
    self_mask: Vec<bool>,
    /// Per-link sender masks of Jacobi-Schwarz (`None` reuses the self
    /// residual, which is the RAS wire format).
    link_masks: Option<Vec<Vec<bool>>>,
    plan: ExchangePlan,
    /// Offset of this subdomain's region in the coarse RHS window.
    coarse_offset: usize,
}

/// Coarse-level state shared by all workers of a two-level run.
struct CoarseShared<'a> {
    space: &'a CoarseSpace,
    lu: SparseLu,
    /// Per-subdomain regions holding the compressed coarse contributions.
    window: Window,
    offsets: Vec<usize>,
    /// Subdomain may write its coarse contribution.
    can_write: FlagArray,
    /// Contribution of a subdomain is complete and unconsumed.
    rhs_ready: FlagArray,
    /// A fresh correction is waiting in the subdomain's window.
    sol_ready: FlagArray,
}

/// Everything the worker threads share.
struct Env<'a> {
    opts: &'a SolveOptions,
    sync: bool,
    ctxs: Vec<WorkerCtx>,
    windows: Vec<Window>,
    coarse: Option<CoarseShared<'a>>,
    monitor: ConvergenceMonitor,
    barrier: TimeoutBarrier,
    scheduler: Scheduler,
    audit: Option<ExchangeAudit>,
    damping: f64,
    start: Instant,
    deadline: Instant,
    stop: AtomicBool,
    converged: AtomicBool,
    time_exceeded: AtomicBool,
    workers_done: AtomicUsize,
    history: Mutex<Vec<HistoryRow>>,
    trajectories: Vec<Mutex<Vec<Vec<f64>>>>,
}

impl Env<'_> {
    /// Emulated per-access cost of lock-based window synchronization.
    fn delay(&self) {
        if let Some(d) = self.opts.access_delay {
            thread::sleep(d);
        }
    }

    fn subdomains(&self) -> usize {
        self.ctxs.len()
    }
}

/// Mutable scratch state owned by one subdomain worker.
struct WorkerState {
    w: Vec<f64>,
    t_self: Vec<f64>,
    t_link: Vec<f64>,
    r: Vec<f64>,
    v: Vec<f64>,
    scratch: Vec<f64>,
    buf: Vec<f64>,
    /// Compressed coarse contribution `R_0 R_p^T t_p`.
    cpub: Vec<f64>,
    /// Incoming coarse correction.
    cbuf: Vec<f64>,
    violations: u64,
    corrections: u64,
}

impl WorkerState {
    fn new(env: &Env, ctx: &WorkerCtx) -> Self {
        let n = ctx.a_p.nrows();
        let coarse_len = env
            .coarse
            .as_ref()
            .map_or(0, |c| c.space.links[ctx.p].coarse_rows.len());
        Self {
            w: vec![0.0; n],
            t_self: vec![0.0; n],
            t_link: vec![0.0; n],
            r: vec![0.0; n],
            v: Vec::new(),
            scratch: Vec::new(),
            buf: Vec::new(),
            cpub: vec![0.0; coarse_len],
            cbuf: Vec::new(),
            violations: 0,
            corrections: 0,
        }
    }
}

/// Scratch state of the coarse worker.
struct CoarseState {
    r0: Vec<f64>,
    v0: Vec<f64>,
    scratch: Vec<f64>,
    buf: Vec<f64>,
    vbuf: Vec<f64>,
    cbuf: Vec<f64>,
}

impl CoarseState {
    fn new(space: &CoarseSpace) -> Self {
        Self {
            r0: vec![0.0; space.n_unknowns()],
            v0: Vec::new(),
            scratch: Vec::new(),
            buf: Vec::new(),
            vbuf: Vec::new(),
            cbuf: Vec::new(),
        }
    }
}

struct WorkerOut {
    w: Vec<f64>,
    updates: u64,
    violations: u64,
    corrections: u64,
}

struct CoarseOut {
    attempts: u64,
    solves: u64,
    final_sleep: Duration,
}

/// Computes the local residual(s) and publishes the shared slices into the
/// neighbor windows; in two-level runs also the coarse contribution when the
/// previous one has been consumed.
fn publish_step(env: &Env, ctx: &WorkerCtx, st: &mut WorkerState) -> Result<()> {
    local_residual(&ctx.a_p, &ctx.f_p, &st.w, &ctx.self_mask, &mut st.t_self);
    for (li, link) in ctx.plan.links.iter().enumerate() {
        if let Some(masks) = &ctx.link_masks {
            local_residual(&ctx.a_p, &ctx.f_p, &st.w, &masks[li], &mut st.t_link);
        }
        let source: &[f64] = if ctx.link_masks.is_some() {
            &st.t_link
        } else {
            &st.t_self
        };
        env.delay();
        send_region(
            link,
            source,
            &env.windows[link.neighbor],
            &mut st.buf,
            env.audit.as_ref(),
        )?;
    }
    if let Some(c) = &env.coarse {
        if c.can_write.get(ctx.p) {
            c.space.links[ctx.p]
                .to_coarse
                .spmv_into(&st.t_self, &mut st.cpub);
            env.delay();
            c.window.put(ctx.coarse_offset, &st.cpub)?;
            c.can_write.set(ctx.p, false);
            c.rhs_ready.set(ctx.p, true);
        }
    }
    Ok(())
}

/// Reads the incoming regions, accumulates the full local residual and
/// publishes the owner-masked norm contribution.
fn accumulate_step(env: &Env, ctx: &WorkerCtx, st: &mut WorkerState) -> Result<()> {
    st.r.copy_from_slice(&st.t_self);
    for link in &ctx.plan.links {
        env.delay();
        st.violations += receive_region(
            link,
            &env.windows[ctx.p],
            &mut st.r,
            &mut st.buf,
            env.audit.as_ref(),
        )? as u64;
    }
    let contrib = local_residual_contrib(&st.r, &ctx.owned);
    env.monitor.publish(ctx.p, contrib);
    Ok(())
}

/// Solves the local problem and applies the damped update, plus half the
/// coarse correction when one is waiting.
fn update_step(env: &Env, ctx: &WorkerCtx, st: &mut WorkerState) -> Result<()> {
    ctx.lu.solve_into(&st.r, &mut st.v, &mut st.scratch);
    axpy(env.damping, &st.v, &mut st.w);
    if let Some(c) = &env.coarse {
        if c.sol_ready.get(ctx.p) {
            st.cbuf.resize(ctx.plan.correction_len, 0.0);
            env.delay();
            env.windows[ctx.p].get(ctx.plan.correction_offset(), &mut st.cbuf)?;
            axpy(0.5, &st.cbuf, &mut st.w);
            c.sol_ready.set(ctx.p, false);
            st.corrections += 1;
        }
    }
    Ok(())
}

/// One coarse poll: if every contribution is ready, accumulate the coarse
/// RHS, solve, and hand each subdomain its correction. Returns whether a
/// solve was performed.
fn coarse_poll(env: &Env, cst: &mut CoarseState) -> Result<bool> {
    let c = env
        .coarse
        .as_ref()
        .expect("coarse poll without coarse data");
    if !c.rhs_ready.all_set() {
        return Ok(false);
    }
    for x in cst.r0.iter_mut() {
        *x = 0.0;
    }
    for (p, link) in c.space.links.iter().enumerate() {
        cst.buf.resize(link.coarse_rows.len(), 0.0);
        env.delay();
        c.window.get(c.offsets[p], &mut cst.buf)?;
        scatter_add(&cst.buf, &link.coarse_rows, &mut cst.r0);
    }
    c.lu.solve_into(&cst.r0, &mut cst.v0, &mut cst.scratch);
    for (p, link) in c.space.links.iter().enumerate() {
        c.rhs_ready.set(p, false);
        c.window.fill(c.offsets[p], link.coarse_rows.len(), 0.0)?;
        c.can_write.set(p, true);
        gather(&cst.v0, &link.coarse_rows, &mut cst.vbuf);
        cst.cbuf.resize(env.ctxs[p].plan.correction_len, 0.0);
        link.from_coarse.spmv_into(&cst.vbuf, &mut cst.cbuf);
        env.delay();
        env.windows[p].put(env.ctxs[p].plan.correction_offset(), &cst.cbuf)?;
        c.sol_ready.set(p, true);
    }
    Ok(true)
}

/// Synchronous subdomain worker: two barriers per iteration; the norm
/// summed after the second is bitwise identical for every worker, so all
/// workers (and the coarse worker) break in lockstep. The convergence check
/// precedes the update, so the reported norm always belongs to the returned
/// iterate and the iteration count equals the number of updates applied.
fn sync_worker(env: &Env, p: usize) -> Result<WorkerOut> {
    let ctx = &env.ctxs[p];
    let mut st = WorkerState::new(env, ctx);
    let mut updates = 0u64;
    loop {
        publish_step(env, ctx, &mut st)?;
        env.barrier.wait()?;
        accumulate_step(env, ctx, &mut st)?;
        if p == 0 && Instant::now() >= env.deadline {
            env.time_exceeded.store(true, Ordering::SeqCst);
        }
        env.barrier.wait()?;
        let norm = env.monitor.refresh();
        if p == 0 {
            env.history.lock().unwrap().push(HistoryRow {
                step: updates,
                time_s: env.start.elapsed().as_secs_f64(),
                residual_norm: norm,
                true_error: None,
            });
        }
        if env.opts.tol > 0.0 && norm <= env.opts.tol {
            env.converged.store(true, Ordering::SeqCst);
            break;
        }
        if updates >= env.opts.max_iterations {
            break;
        }
        if env.time_exceeded.load(Ordering::SeqCst) {
            break;
        }
        update_step(env, ctx, &mut st)?;
        updates += 1;
        if env.opts.record_trajectory {
            env.trajectories[p].lock().unwrap().push(st.w.clone());
        }
    }
    Ok(WorkerOut {
        w: st.w,
        updates,
        violations: st.violations,
        corrections: st.corrections,
    })
}

/// Synchronous coarse worker: participates in both barriers and evaluates
/// the same break conditions as the subdomain workers, so the whole group
/// stays in lockstep. Between the barriers all contributions are guaranteed
/// ready, so every poll solves.
fn sync_coarse(env: &Env) -> Result<CoarseOut> {
    let space = env
        .coarse
        .as_ref()
        .expect("sync coarse without coarse data");
    let mut cst = CoarseState::new(space.space);
    let mut attempts = 0u64;
    let mut solves = 0u64;
    let mut iters = 0u64;
    loop {
        env.barrier.wait()?;
        attempts += 1;
        if coarse_poll(env, &mut cst)? {
            solves += 1;
        }
        env.barrier.wait()?;
        let norm = env.monitor.refresh();
        if env.opts.tol > 0.0 && norm <= env.opts.tol {
            break;
        }
        if iters >= env.opts.max_iterations {
            break;
        }
        if env.time_exceeded.load(Ordering::SeqCst) {
            break;
        }
        iters += 1;
    }
    Ok(CoarseOut {
        attempts,
        solves,
        final_sleep: Duration::ZERO,
    })
}

/// Asynchronous subdomain worker: free-running (or scheduler-ordered)
/// publish/update turns, polling the shared estimate for convergence.
fn async_worker(env: &Env, p: usize) -> Result<WorkerOut> {
    let out = async_worker_inner(env, p);
    env.scheduler.retire(Participant::Subdomain(p));
    out
}

fn async_worker_inner(env: &Env, p: usize) -> Result<WorkerOut> {
    let ctx = &env.ctxs[p];
    let mut st = WorkerState::new(env, ctx);
    let mut updates = 0u64;
    loop {
        if env.stop.load(Ordering::SeqCst) {
            break;
        }
        if Instant::now() >= env.deadline {
            env.stop.store(true, Ordering::SeqCst);
            break;
        }
        if updates >= env.opts.max_iterations {
            break;
        }
        env.scheduler
            .turn(Participant::Subdomain(p), Turn::Publish, || {
                publish_step(env, ctx, &mut st)
            })??;
        env.scheduler
            .turn(Participant::Subdomain(p), Turn::Update, || -> Result<()> {
                accumulate_step(env, ctx, &mut st)?;
                update_step(env, ctx, &mut st)
            })??;
        updates += 1;
        if env.opts.record_trajectory {
            env.trajectories[p].lock().unwrap().push(st.w.clone());
        }
        if env.monitor.converged() {
            env.converged.store(true, Ordering::SeqCst);
            env.stop.store(true, Ordering::SeqCst);
            break;
        }
    }
    Ok(WorkerOut {
        w: st.w,
        updates,
        violations: st.violations,
        corrections: st.corrections,
    })
}

/// Asynchronous coarse worker: polls until all contributions are ready,
/// solves, and broadcasts corrections; between failed polls it sleeps for an
/// adaptively tuned interval (free-run mode only).
fn async_coarse(env: &Env) -> Result<CoarseOut> {
    let out = async_coarse_inner(env);
    env.scheduler.retire(Participant::Coarse);
    out
}

fn async_coarse_inner(env: &Env) -> Result<CoarseOut> {
    let space = env
        .coarse
        .as_ref()
        .expect("async coarse without coarse data");
    let mut cst = CoarseState::new(space.space);
    let mut ctrl = SleepController::default();
    loop {
        if env.stop.load(Ordering::SeqCst)
            || env.workers_done.load(Ordering::SeqCst) == env.subdomains()
        {
            break;
        }
        if Instant::now() >= env.deadline {
            env.stop.store(true, Ordering::SeqCst);
            break;
        }
        let performed = env.scheduler.turn(Participant::Coarse, Turn::Coarse, || {
            coarse_poll(env, &mut cst)
        })??;
        ctrl.record(performed);
        if !performed && env.scheduler.mode() == SchedMode::FreeRun {
            thread::sleep(ctrl.interval());
        }
    }
    Ok(CoarseOut {
        attempts: ctrl.attempts(),
        solves: ctrl.solves(),
        final_sleep: ctrl.interval(),
    })
}

/// Monitor master of asynchronous runs: periodically refreshes the global
/// residual estimate from the published contributions and records it.
fn monitor_loop(env: &Env) {
    let mut sample = 0u64;
    loop {
        if env.stop.load(Ordering::SeqCst)
            || env.workers_done.load(Ordering::SeqCst) == env.subdomains()
        {
            break;
        }
        thread::sleep(env.opts.monitor_cadence);
        let norm = env.monitor.refresh();
        env.history.lock().unwrap().push(HistoryRow {
            step: sample,
            time_s: env.start.elapsed().as_secs_f64(),
            residual_norm: norm,
            true_error: None,
        });
        sample += 1;
    }
    env.monitor.refresh();
}

/// Runs a fully specified solve.
pub(crate) fn run(cfg: RunConfig<'_>) -> Result<SolveResult> {
    let p_count = cfg.decomp.n_subdomains();
    if p_count == 0 {
        return Err(Error::InvalidPartition(
            "decomposition has no subdomains".into(),
        ));
    }
    if cfg.problem.n_unknowns() != cfg.decomp.n_global {
        return Err(Error::InvalidConfig(format!(
            "problem has {} unknowns but the decomposition covers {}",
            cfg.problem.n_unknowns(),
            cfg.decomp.n_global
        )));
    }
    let two_level = cfg.coarse.is_some();
    let plans = build_plans(cfg.decomp, two_level);
    let audit = cfg
        .opts
        .audit_exchanges
        .then(|| ExchangeAudit::for_plans(&plans));

    let mut ctxs = Vec::with_capacity(p_count);
    for (map, plan) in cfg.decomp.maps.iter().zip(plans) {
        let a_p = local_matrix(&cfg.problem.matrix, map)?;
        let lu = SparseLu::factor(&a_p, LuOrdering::ReverseCuthillMcKee)?;
        let f_p: Vec<f64> = map.overlap.iter().map(|&g| cfg.problem.rhs[g]).collect();
        let owned = map.owned_mask();
        let self_mask = match cfg.kind {
            SolverKind::JacobiSchwarz => vec![true; map.len()],
            _ => owned.clone(),
        };
        let link_masks = match cfg.js {
            None => None,
            Some(js) => Some(
                plan.links
                    .iter()
                    .map(|l| {
                        js[l.neighbor]
                            .mask_for(map.p)
                            .map(<[bool]>::to_vec)
                            .ok_or_else(|| {
                                Error::InvalidConfig(format!(
                                    "mask family of {} lacks sender {}",
                                    l.neighbor, map.p
                                ))
                            })
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        ctxs.push(WorkerCtx {
            p: map.p,
            a_p,
            lu,
            f_p,
            owned,
            self_mask,
            link_masks,
            plan,
            coarse_offset: 0,
        });
    }
    let windows: Vec<Window> = ctxs
        .iter()
        .map(|c| Window::new(c.plan.window_len()))
        .collect();

    let coarse = match cfg.coarse {
        None => None,
        Some(space) => {
            let lu = SparseLu::factor(&space.matrix, LuOrdering::ReverseCuthillMcKee)?;
            let mut offsets = Vec::with_capacity(p_count);
            let mut total = 0usize;
            for link in &space.links {
                offsets.push(total);
                total += link.coarse_rows.len();
            }
            for (ctx, &off) in ctxs.iter_mut().zip(&offsets) {
                ctx.coarse_offset = off;
            }
            Some(CoarseShared {
                space,
                lu,
                window: Window::new(total),
                offsets,
                can_write: FlagArray::new(p_count, true),
                rhs_ready: FlagArray::new(p_count, false),
                sol_ready: FlagArray::new(p_count, false),
            })
        }
    };

    let start = Instant::now();
    let env = Env {
        opts: cfg.opts,
        sync: cfg.sync,
        ctxs,
        windows,
        coarse,
        monitor: ConvergenceMonitor::new(p_count, cfg.opts.tol),
        barrier: TimeoutBarrier::new(
            p_count + usize::from(two_level),
            cfg.opts.collective_timeout,
        ),
        scheduler: Scheduler::new(
            cfg.opts.scheduler,
            p_count,
            two_level && !cfg.sync,
            cfg.opts.collective_timeout,
        ),
        audit,
        damping: cfg.kind.damping(),
        start,
        deadline: start + cfg.opts.max_time,
        stop: AtomicBool::new(false),
        converged: AtomicBool::new(false),
        time_exceeded: AtomicBool::new(false),
        workers_done: AtomicUsize::new(0),
        history: Mutex::new(Vec::new()),
        trajectories: (0..p_count).map(|_| Mutex::new(Vec::new())).collect(),
    };

    let mut worker_results: Vec<Result<WorkerOut>> = Vec::with_capacity(p_count);
    let mut coarse_result: Option<Result<CoarseOut>> = None;
    thread::scope(|s| {
        let handles: Vec<_> = (0..p_count)
            .map(|p| {
                let env = &env;
                s.spawn(move || {
                    let out = if env.sync {
                        sync_worker(env, p)
                    } else {
                        async_worker(env, p)
                    };
                    if out.is_err() {
                        env.stop.store(true, Ordering::SeqCst);
                    }
                    env.workers_done.fetch_add(1, Ordering::SeqCst);
                    out
                })
            })
            .collect();
        let coarse_handle = env.coarse.as_ref().map(|_| {
            let env = &env;
            s.spawn(move || {
                let out = if env.sync {
                    sync_coarse(env)
                } else {
                    async_coarse(env)
                };
                if out.is_err() {
                    env.stop.store(true, Ordering::SeqCst);
                }
                out
            })
        });
        let monitor_handle = (!env.sync).then(|| {
            let env = &env;
            s.spawn(move || monitor_loop(env))
        });
        for h in handles {
            worker_results.push(h.join().expect("subdomain worker panicked"));
        }
        if let Some(h) = coarse_handle {
            coarse_result = Some(h.join().expect("coarse worker panicked"));
        }
        if let Some(h) = monitor_handle {
            h.join().expect("monitor thread panicked");
        }
    });
    let wall_time = env.start.elapsed();

    // Prefer a root-cause error over the collective timeouts it causes in
    // the other workers.
    let mut root_err: Option<Error> = None;
    let mut timeout_err: Option<Error> = None;
    let mut outs = Vec::with_capacity(p_count);
    for res in worker_results {
        match res {
            Ok(o) => outs.push(o),
            Err(e @ Error::CollectiveTimeout(_)) => timeout_err = timeout_err.or(Some(e)),
            Err(e) => root_err = root_err.or(Some(e)),
        }
    }
    let coarse_out = match coarse_result {
        None => None,
        Some(Ok(c)) => Some(c),
        Some(Err(e @ Error::CollectiveTimeout(_))) => {
            timeout_err = timeout_err.or(Some(e));
            None
        }
        Some(Err(e)) => {
            root_err = root_err.or(Some(e));
            None
        }
    };
    if let Some(e) = root_err.or(timeout_err) {
        return Err(e);
    }

    let ws: Vec<Vec<f64>> = outs.iter().map(|o| o.w.clone()).collect();
    let (u, local_solutions) = post_process(cfg.decomp, &ws);
    ensure_finite(&u, "composed solution")?;
    let solver_residual_norm = env.monitor.refresh();
    let mut au = vec![0.0; u.len()];
    cfg.problem.matrix.spmv_into(&u, &mut au);
    let true_residual_norm = cfg
        .problem
        .rhs
        .iter()
        .zip(&au)
        .map(|(f, a)| (f - a) * (f - a))
        .sum::<f64>()
        .sqrt();

    let coarse_stats = coarse_out.map(|c| CoarseStats {
        poll_attempts: c.attempts,
        solves: c.solves,
        corrections_applied: outs.iter().map(|o| o.corrections).collect(),
        final_sleep: c.final_sleep,
    });

    Ok(SolveResult {
        u,
        local_solutions,
        update_counts: outs.iter().map(|o| o.updates).collect(),
        sync_iterations: cfg.sync.then(|| outs[0].updates),
        wall_time,
        residual_history: env.history.into_inner().unwrap(),
        solver_residual_norm,
        true_residual_norm,
        converged: env.converged.load(Ordering::SeqCst),
        audit_violations: outs.iter().map(|o| o.violations).sum(),
        coarse: coarse_stats,
        trajectories: cfg.opts.record_trajectory.then(|| {
            env.trajectories
                .into_iter()
                .map(|m| m.into_inner().unwrap())
                .collect()
        }),
    })
}

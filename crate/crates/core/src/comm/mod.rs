//! In-process emulation of passive-target one-sided communication.
//!
//! Each worker exposes a [`Window`] of `f64` cells that other workers write
//! with plain puts and read with plain gets, without any involvement of the
//! target — the put/get path never takes a lock. Element-wise atomicity is
//! guaranteed (a reader sees, for every cell, some value that was actually
//! stored there), but a multi-cell put is not atomic as a whole: a
//! concurrent reader may observe a mix of older and newer cells. That is
//! exactly the contract the asynchronous solvers are designed for, and the
//! stress tests assert both halves of it.
//!
//! Control flow between workers uses [`Flag`]s with release/acquire
//! ordering, so flag-gated data (the two-level coarse protocol) is seen
//! consistently. Synchronous solvers are organized with a
//! [`TimeoutBarrier`]; a barrier that does not complete within its timeout
//! reports [`Error::CollectiveTimeout`] instead of hanging the process.

pub mod plan;
pub mod scheduler;

pub use plan::{build_plans, ExchangeAudit, ExchangePlan, NeighborLink};
pub use scheduler::{SchedMode, Scheduler, Turn};

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

/// An `f64` cell with atomic load/store through its bit pattern.
#[derive(Debug, Default)]
pub struct AtomicF64(AtomicU64);

impl AtomicF64 {
    pub fn new(v: f64) -> Self {
        Self(AtomicU64::new(v.to_bits()))
    }

    pub fn load(&self, order: Ordering) -> f64 {
        f64::from_bits(self.0.load(order))
    }

    pub fn store(&self, v: f64, order: Ordering) {
        self.0.store(v.to_bits(), order)
    }
}

/// A window of remotely accessible `f64` cells.
///
/// Data transfers use relaxed element-wise atomics: there is no ordering
/// between cells, only the guarantee that each individual cell read returns
/// a value some put stored (or the initial zero). Accesses to a window whose
/// exposure epoch has been closed fail.
#[derive(Debug)]
pub struct Window {
    cells: Box<[AtomicF64]>,
    epoch_open: AtomicBool,
}

impl Window {
    /// A zero-initialized window with an open exposure epoch.
    pub fn new(len: usize) -> Self {
        Self {
            cells: (0..len).map(|_| AtomicF64::new(0.0)).collect(),
            epoch_open: AtomicBool::new(true),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Ends the exposure epoch; subsequent puts and gets fail.
    pub fn close_epoch(&self) {
        self.epoch_open.store(false, Ordering::Release);
    }

    pub fn open_epoch(&self) {
        self.epoch_open.store(true, Ordering::Release);
    }

    fn check_access(&self, offset: usize, len: usize) -> Result<()> {
        if !self.epoch_open.load(Ordering::Acquire) {
            return Err(Error::EpochClosed);
        }
        if offset + len > self.cells.len() {
            return Err(Error::WindowOutOfBounds {
                offset,
                len,
                size: self.cells.len(),
            });
        }
        Ok(())
    }

    /// Writes `data` starting at `offset`, cell by cell.
    pub fn put(&self, offset: usize, data: &[f64]) -> Result<()> {
        self.check_access(offset, data.len())?;
        for (k, &v) in data.iter().enumerate() {
            self.cells[offset + k].store(v, Ordering::Relaxed);
        }
        Ok(())
    }

    /// Reads `out.len()` cells starting at `offset`.
    pub fn get(&self, offset: usize, out: &mut [f64]) -> Result<()> {
        self.check_access(offset, out.len())?;
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.cells[offset + k].load(Ordering::Relaxed);
        }
        Ok(())
    }

    /// Overwrites a range with a constant.
    pub fn fill(&self, offset: usize, len: usize, v: f64) -> Result<()> {
        self.check_access(offset, len)?;
        for k in 0..len {
            self.cells[offset + k].store(v, Ordering::Relaxed);
        }
        Ok(())
    }
}

/// A one-bit synchronization flag with release/acquire semantics: data
/// written before `set(true)` is visible to a reader that observes `true`.
#[derive(Debug, Default)]
pub struct Flag(AtomicBool);

impl Flag {
    pub fn new(v: bool) -> Self {
        Self(AtomicBool::new(v))
    }

    pub fn set(&self, v: bool) {
        self.0.store(v, Ordering::Release)
    }

    pub fn get(&self) -> bool {
        self.0.load(Ordering::Acquire)
    }
}

/// A fixed array of flags, one per peer.
#[derive(Debug)]
pub struct FlagArray(Box<[Flag]>);

impl FlagArray {
    pub fn new(len: usize, initial: bool) -> Self {
        Self((0..len).map(|_| Flag::new(initial)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn set(&self, i: usize, v: bool) {
        self.0[i].set(v)
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i].get()
    }

    pub fn all_set(&self) -> bool {
        self.0.iter().all(Flag::get)
    }
}

/// A reusable barrier that fails instead of hanging when a participant does
/// not arrive within the timeout.
#[derive(Debug)]
pub struct TimeoutBarrier {
    n: usize,
    timeout: Duration,
    state: Mutex<BarrierState>,
    cv: Condvar,
}

#[derive(Debug)]
struct BarrierState {
    generation: u64,
    count: usize,
}

impl TimeoutBarrier {
    pub fn new(n: usize, timeout: Duration) -> Self {
        Self {
            n,
            timeout,
            state: Mutex::new(BarrierState {
                generation: 0,
                count: 0,
            }),
            cv: Condvar::new(),
        }
    }

    /// Blocks until all `n` participants arrive or the timeout elapses.
    pub fn wait(&self) -> Result<()> {
        let deadline = Instant::now() + self.timeout;
        let mut state = self.state.lock().expect("barrier mutex poisoned");
        let generation = state.generation;
        state.count += 1;
        if state.count == self.n {
            state.count = 0;
            state.generation += 1;
            self.cv.notify_all();
            return Ok(());
        }
        while state.generation == generation {
            let now = Instant::now();
            if now >= deadline {
                return Err(Error::CollectiveTimeout(self.timeout));
            }
            let (guard, _) = self
                .cv
                .wait_timeout(state, deadline - now)
                .expect("barrier mutex poisoned");
            state = guard;
        }
        Ok(())
    }
}

/// Outcome of [`stamp_stress`].
#[derive(Debug, Clone, Copy)]
pub struct StressReport {
    /// Window put/get calls performed.
    pub ops: u64,
    /// Reads that returned a 64-bit value nobody stored: either the two
    /// stamped halves disagreed (a torn word) or the stamp fields were out
    /// of range.
    pub torn: u64,
    /// Reads that observed data older than the generation whose completion
    /// the writer had already published through a release store.
    pub stale: u64,
}

/// Hammers one window per writer with stamped multi-cell puts while a paired
/// reader audits every get, and reports the violations observed.
///
/// Every stored word duplicates a 32-bit stamp `[writer:2][slot:6][gen:18]`
/// in both halves, so any torn read is caught by comparing the halves (two
/// generations never share a half), the exponent bits can never form a NaN,
/// and per-cell generations are recoverable. Writers publish each finished
/// generation with a release store that readers acquire: observing data
/// older than the acquired generation is a flag-handoff staleness violation.
/// Word atomicity and release/acquire handoff promise both counts stay zero;
/// mid-put mixes of *neighboring* generations are allowed by contract and
/// not counted.
pub fn stamp_stress(
    writers: usize,
    region: usize,
    generations: u64,
    reads_per_reader: u64,
) -> StressReport {
    assert!(writers <= 4, "writer id must fit 2 stamp bits");
    assert!(region <= 64, "slot must fit 6 stamp bits");
    assert!(generations < 1 << 18, "generation must fit 18 stamp bits");

    fn stamp(writer: usize, slot: usize, generation: u64) -> f64 {
        let half = ((writer as u64) << 30) | ((slot as u64) << 24) | generation;
        f64::from_bits((half << 32) | half)
    }
    fn decode(v: f64) -> Option<(usize, usize, u64)> {
        let bits = v.to_bits();
        let half = bits >> 32;
        if half != bits & 0xFFFF_FFFF {
            return None;
        }
        Some((
            (half >> 30) as usize,
            ((half >> 24) & 0x3F) as usize,
            half & 0x3F_FFFF,
        ))
    }

    let windows: Vec<Window> = (0..writers).map(|_| Window::new(region)).collect();
    let published: Vec<AtomicU64> = (0..writers).map(|_| AtomicU64::new(0)).collect();
    let ops = AtomicU64::new(0);
    let torn = AtomicU64::new(0);
    let stale = AtomicU64::new(0);

    std::thread::scope(|s| {
        for w in 0..writers {
            let (window, published, ops) = (&windows[w], &published[w], &ops);
            s.spawn(move || {
                let mut buf = vec![0.0; region];
                for g in 1..=generations {
                    for (slot, cell) in buf.iter_mut().enumerate() {
                        *cell = stamp(w, slot, g);
                    }
                    window.put(0, &buf).expect("stress put in bounds");
                    published.store(g, Ordering::Release);
                }
                ops.fetch_add(generations, Ordering::Relaxed);
            });
        }
        for w in 0..writers {
            let (window, published) = (&windows[w], &published[w]);
            let (ops, torn, stale) = (&ops, &torn, &stale);
            s.spawn(move || {
                let mut buf = vec![0.0; region];
                let mut reads = 0u64;
                while reads < reads_per_reader {
                    let seen = published.load(Ordering::Acquire);
                    if seen == 0 {
                        std::hint::spin_loop();
                        continue;
                    }
                    window.get(0, &mut buf).expect("stress get in bounds");
                    reads += 1;
                    for (slot, &v) in buf.iter().enumerate() {
                        match decode(v) {
                            Some((writer, sl, g))
                                if writer == w && sl == slot && g <= generations =>
                            {
                                if g < seen {
                                    stale.fetch_add(1, Ordering::Relaxed);
                                }
                            }
                            _ => {
                                torn.fetch_add(1, Ordering::Relaxed);
                            }
                        }
                    }
                }
                ops.fetch_add(reads, Ordering::Relaxed);
            });
        }
    });

    StressReport {
        ops: ops.load(Ordering::Relaxed),
        torn: torn.load(Ordering::Relaxed),
        stale: stale.load(Ordering::Relaxed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn window_put_get_round_trip() {
        let w = Window::new(8);
        w.put(2, &[1.5, -2.5, 3.5]).unwrap();
        let mut out = [0.0; 3];
        w.get(2, &mut out).unwrap();
        assert_eq!(out, [1.5, -2.5, 3.5]);
        let mut full = [1.0; 8];
        w.get(0, &mut full).unwrap();
        assert_eq!(&full[..2], &[0.0, 0.0]);
    }

    #[test]
    fn window_bounds_are_checked() {
        let w = Window::new(4);
        assert!(matches!(
            w.put(3, &[0.0, 0.0]),
            Err(Error::WindowOutOfBounds { .. })
        ));
        let mut out = [0.0; 5];
        assert!(matches!(
            w.get(0, &mut out),
            Err(Error::WindowOutOfBounds { .. })
        ));
    }

    #[test]
    fn closed_epoch_rejects_access() {
        let w = Window::new(4);
        w.close_epoch();
        assert!(matches!(w.put(0, &[1.0]), Err(Error::EpochClosed)));
        let mut out = [0.0];
        assert!(matches!(w.get(0, &mut out), Err(Error::EpochClosed)));
        w.open_epoch();
        assert!(w.put(0, &[1.0]).is_ok());
    }

    #[test]
    fn concurrent_cell_reads_see_written_values_only() {
        // Element-wise atomicity: with two writers alternating two full-word
        // patterns per cell, a reader must only ever observe one of the
        // written patterns (or the initial zero) — never a torn word.
        let w = Arc::new(Window::new(16));
        let patterns = [
            f64::from_bits(0x0102_0304_0506_0708),
            f64::from_bits(0x8070_6050_4030_2010),
        ];
        let stop = Arc::new(AtomicBool::new(false));
        let mut handles = Vec::new();
        for &p in &patterns {
            let w = Arc::clone(&w);
            let stop = Arc::clone(&stop);
            handles.push(std::thread::spawn(move || {
                let buf = vec![p; 16];
                while !stop.load(Ordering::Relaxed) {
                    w.put(0, &buf).unwrap();
                }
            }));
        }
        let allowed: Vec<u64> = patterns
            .iter()
            .map(|p| p.to_bits())
            .chain(std::iter::once(0u64))
            .collect();
        let mut out = vec![0.0; 16];
        for _ in 0..2000 {
            w.get(0, &mut out).unwrap();
            for v in &out {
                assert!(
                    allowed.contains(&v.to_bits()),
                    "torn read: {:016x}",
                    v.to_bits()
                );
            }
        }
        stop.store(true, Ordering::Relaxed);
        for h in handles {
            h.join().unwrap();
        }
    }

    #[test]
    fn flags_release_acquire_publish_data() {
        let w = Arc::new(Window::new(1));
        let flag = Arc::new(Flag::new(false));
        let (w2, f2) = (Arc::clone(&w), Arc::clone(&flag));
        let h = std::thread::spawn(move || {
            w2.put(0, &[42.0]).unwrap();
            f2.set(true);
        });
        while !flag.get() {
            std::hint::spin_loop();
        }
        let mut out = [0.0];
        w.get(0, &mut out).unwrap();
        assert_eq!(out[0], 42.0);
        h.join().unwrap();
    }

    #[test]
    fn barrier_synchronizes_and_reuses() {
        let n = 4;
        let barrier = Arc::new(TimeoutBarrier::new(n, Duration::from_secs(30)));
        let counter = Arc::new(AtomicU64::new(0));
        let handles: Vec<_> = (0..n)
            .map(|_| {
                let b = Arc::clone(&barrier);
                let c = Arc::clone(&counter);
                std::thread::spawn(move || {
                    for round in 0..5u64 {
                        c.fetch_add(1, Ordering::SeqCst);
                        b.wait().unwrap();
                        // Everyone has incremented for this round.
                        assert!(c.load(Ordering::SeqCst) >= (round + 1) * n as u64);
                        b.wait().unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(counter.load(Ordering::SeqCst), 5 * n as u64);
    }

    #[test]
    fn barrier_times_out_when_short_of_participants() {
        let barrier = TimeoutBarrier::new(2, Duration::from_millis(50));
        let start = Instant::now();
        match barrier.wait() {
            Err(Error::CollectiveTimeout(_)) => {}
            other => panic!("expected timeout, got {other:?}"),
        }
        assert!(start.elapsed() >= Duration::from_millis(50));
    }

    #[test]
    fn stamp_stress_audits_cleanly() {
        let report = stamp_stress(2, 16, 5_000, 2_000);
        assert!(report.ops >= 14_000);
        assert_eq!(report.torn, 0);
        assert_eq!(report.stale, 0);
    }
}

//! Turn scheduler bridging asynchronous solvers to deterministic replay.
//!
//! In [`SchedMode::FreeRun`], `turn` runs its closure immediately: workers
//! proceed at their own pace and all interleavings allowed by the window
//! semantics can occur. In [`SchedMode::RoundRobin`], turns are granted in a
//! fixed cycle — every subdomain's publish step in id order, then the coarse
//! step (if present), then every subdomain's update step — which serializes
//! the workers into exactly the data flow of one synchronous iteration. The
//! asynchronous solvers run the same code in both modes; under round-robin
//! their trajectory must reproduce the synchronous one bitwise, which is how
//! the concurrent path is tested.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

/// Scheduling mode for asynchronous runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SchedMode {
    /// No coordination; true asynchronous execution.
    #[default]
    FreeRun,
    /// Deterministic phase-ordered turns for replay testing.
    RoundRobin,
}

/// The kind of turn a worker requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Turn {
    /// Compute and publish contributions to peers.
    Publish,
    /// Read peer contributions and update local state.
    Update,
    /// The coarse worker's poll-accumulate-solve-broadcast step.
    Coarse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Publish,
    Coarse,
    Update,
}

#[derive(Debug)]
struct RoundState {
    phase: Phase,
    cursor: usize,
    active: Vec<bool>,
    coarse_active: bool,
}

impl RoundState {
    fn next_active_from(&self, from: usize) -> Option<usize> {
        (from..self.active.len()).find(|&p| self.active[p])
    }

    /// Advances past the turn just completed (or a retired slot).
    fn advance(&mut self) {
        loop {
            match self.phase {
                Phase::Publish => {
                    if let Some(p) = self.next_active_from(self.cursor) {
                        self.cursor = p;
                        return;
                    }
                    self.phase = Phase::Coarse;
                }
                Phase::Coarse => {
                    if self.coarse_active {
                        return;
                    }
                    self.phase = Phase::Update;
                    self.cursor = 0;
                }
                Phase::Update => {
                    if let Some(p) = self.next_active_from(self.cursor) {
                        self.cursor = p;
                        return;
                    }
                    self.phase = Phase::Publish;
                    self.cursor = 0;
                    if self.active.iter().all(|&a| !a) {
                        // Only the coarse worker is left; let it spin on its
                        // own turns so it can observe the stop signal.
                        self.phase = Phase::Coarse;
                        if !self.coarse_active {
                            return; // nobody left; state is irrelevant
                        }
                    }
                }
            }
        }
    }

    fn grants(&self, who: Participant, turn: Turn) -> bool {
        match (self.phase, turn, who) {
            (Phase::Publish, Turn::Publish, Participant::Subdomain(p)) => self.cursor == p,
            (Phase::Update, Turn::Update, Participant::Subdomain(p)) => self.cursor == p,
            (Phase::Coarse, Turn::Coarse, Participant::Coarse) => true,
            _ => false,
        }
    }
}

/// Identity of a scheduler participant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Participant {
    Subdomain(usize),
    Coarse,
}

/// Grants turns to workers according to the configured mode.
#[derive(Debug)]
pub struct Scheduler {
    mode: SchedMode,
    timeout: Duration,
    state: Mutex<RoundState>,
    cv: Condvar,
}

impl Scheduler {
    /// A scheduler for `subdomains` workers, plus a coarse worker if
    /// `with_coarse`. `timeout` bounds how long a worker may wait for its
    /// turn in round-robin mode.
    pub fn new(mode: SchedMode, subdomains: usize, with_coarse: bool, timeout: Duration) -> Self {
        let mut state = RoundState {
            phase: Phase::Publish,
            cursor: 0,
            active: vec![true; subdomains],
            coarse_active: with_coarse,
        };
        // Position on the first grantable turn.
        state.advance();
        Self {
            mode,
            timeout,
            state: Mutex::new(state),
            cv: Condvar::new(),
        }
    }

    pub fn mode(&self) -> SchedMode {
        self.mode
    }

    /// Runs `f` when it is `who`'s turn of kind `turn`. In free-run mode the
    /// closure runs immediately.
    pub fn turn<T>(&self, who: Participant, turn: Turn, f: impl FnOnce() -> T) -> Result<T> {
        if self.mode == SchedMode::FreeRun {
            return Ok(f());
        }
        let deadline = Instant::now() + self.timeout;
        let mut state = self.state.lock().expect("scheduler mutex poisoned");
        while !state.grants(who, turn) {
            let now = Instant::now();
            if now >= deadline {
                return Err(Error::CollectiveTimeout(self.timeout));
            }
            let (guard, _) = self
                .cv
                .wait_timeout(state, deadline - now)
                .expect("scheduler mutex poisoned");
            state = guard;
        }
        // Run the turn while holding the lock: peers are parked on the
        // condvar, so the whole cycle is serialized deterministically.
        let out = f();
        match state.phase {
            Phase::Publish | Phase::Update => state.cursor += 1,
            Phase::Coarse => {
                state.phase = Phase::Update;
                state.cursor = 0;
            }
        }
        state.advance();
        drop(state);
        self.cv.notify_all();
        Ok(out)
    }

    /// Removes a participant from the cycle (it will request no more turns).
    pub fn retire(&self, who: Participant) {
        if self.mode == SchedMode::FreeRun {
            return;
        }
        let mut state = self.state.lock().expect("scheduler mutex poisoned");
        match who {
            Participant::Subdomain(p) => state.active[p] = false,
            Participant::Coarse => state.coarse_active = false,
        }
        state.advance();
        drop(state);
        self.cv.notify_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn free_run_is_passthrough() {
        let s = Scheduler::new(SchedMode::FreeRun, 3, false, Duration::from_secs(1));
        let v = s
            .turn(Participant::Subdomain(2), Turn::Update, || 7)
            .unwrap();
        assert_eq!(v, 7);
    }

    #[test]
    fn round_robin_orders_phases_and_ids() {
        let p = 3;
        let s = Arc::new(Scheduler::new(
            SchedMode::RoundRobin,
            p,
            true,
            Duration::from_secs(30),
        ));
        let log = Arc::new(Mutex::new(Vec::new()));
        let rounds = 4;
        let mut handles = Vec::new();
        for id in 0..p {
            let s = Arc::clone(&s);
            let log = Arc::clone(&log);
            handles.push(std::thread::spawn(move || {
                for _ in 0..rounds {
                    s.turn(Participant::Subdomain(id), Turn::Publish, || {
                        log.lock().unwrap().push(format!("pub{id}"));
                    })
                    .unwrap();
                    s.turn(Participant::Subdomain(id), Turn::Update, || {
                        log.lock().unwrap().push(format!("upd{id}"));
                    })
                    .unwrap();
                }
                s.retire(Participant::Subdomain(id));
            }));
        }
        {
            let s = Arc::clone(&s);
            let log = Arc::clone(&log);
            handles.push(std::thread::spawn(move || {
                for _ in 0..rounds {
                    s.turn(Participant::Coarse, Turn::Coarse, || {
                        log.lock().unwrap().push("coarse".into());
                    })
                    .unwrap();
                }
                s.retire(Participant::Coarse);
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        let log = log.lock().unwrap();
        let mut expected = Vec::new();
        for _ in 0..rounds {
            for id in 0..p {
                expected.push(format!("pub{id}"));
            }
            expected.push("coarse".to_string());
            for id in 0..p {
                expected.push(format!("upd{id}"));
            }
        }
        assert_eq!(*log, expected);
    }

    #[test]
    fn cycle_continues_after_retirement() {
        let s = Arc::new(Scheduler::new(
            SchedMode::RoundRobin,
            2,
            false,
            Duration::from_secs(30),
        ));
        let log = Arc::new(Mutex::new(Vec::new()));
        let mut handles = Vec::new();
        for (id, my_rounds) in [(0usize, 1usize), (1usize, 3usize)] {
            let s = Arc::clone(&s);
            let log = Arc::clone(&log);
            handles.push(std::thread::spawn(move || {
                for _ in 0..my_rounds {
                    s.turn(Participant::Subdomain(id), Turn::Publish, || {
                        log.lock().unwrap().push(format!("pub{id}"));
                    })
                    .unwrap();
                    s.turn(Participant::Subdomain(id), Turn::Update, || {
                        log.lock().unwrap().push(format!("upd{id}"));
                    })
                    .unwrap();
                }
                s.retire(Participant::Subdomain(id));
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        let log = log.lock().unwrap();
        let expected = vec![
            "pub0", "pub1", "upd0", "upd1", // round 1, both
            "pub1", "upd1", // round 2, only worker 1
            "pub1", "upd1", // round 3
        ];
        assert_eq!(*log, expected);
    }

    #[test]
    fn waiting_for_a_dead_cycle_times_out() {
        let s = Scheduler::new(SchedMode::RoundRobin, 2, false, Duration::from_millis(40));
        // Worker 1 asks for a turn but worker 0 never shows up.
        match s.turn(Participant::Subdomain(1), Turn::Publish, || ()) {
            Err(Error::CollectiveTimeout(_)) => {}
            other => panic!("expected timeout, got {other:?}"),
        }
    }
}

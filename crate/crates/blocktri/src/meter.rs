//! Exact operation counting in integer "flop-thirds".
//!
//! One flop is 3 units, so the `n^3/3` cost of a Cholesky block factorization
//! is representable exactly as `n^3` units. Every kernel adds its cost-model
//! value on completion; the counters never estimate.

use std::num::NonZeroU64;
use std::sync::atomic::{AtomicU64, Ordering};

/// Shared flop counter in thirds-of-a-flop units.
///
/// Kernels running on worker threads may share one meter (additions are
/// atomic), or run against per-task meters that the strategy folds into the
/// shared one at a barrier.
#[derive(Debug, Default)]
pub struct FlopMeter {
    thirds: AtomicU64,
}

/// Snapshot of a meter, for measuring deltas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeterMark(u64);

impl FlopMeter {
    pub fn new() -> Self {
        Self {
            thirds: AtomicU64::new(0),
        }
    }

    #[inline]
    pub fn add(&self, units: u64) {
        self.thirds.fetch_add(units, Ordering::Relaxed);
    }

    /// Total units accumulated so far.
    pub fn thirds(&self) -> u64 {
        self.thirds.load(Ordering::Relaxed)
    }

    /// Total units expressed in flops (exact only when divisible by 3).
    pub fn flops(&self) -> f64 {
        self.thirds() as f64 / 3.0
    }

    pub fn mark(&self) -> MeterMark {
        MeterMark(self.thirds())
    }

    pub fn delta(&self, mark: MeterMark) -> u64 {
        self.thirds() - mark.0
    }
}

/// Worker-count parameter of the parallel strategies.
///
/// `Unbounded` models the "sufficient parallel resources" regime: every task
/// of a level runs in its own slot, so a level costs its most expensive task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Workers {
    Finite(NonZeroU64),
    Unbounded,
}

impl Workers {
    pub fn finite(w: u64) -> Self {
        Workers::Finite(NonZeroU64::new(w).expect("worker count must be >= 1"))
    }

    pub fn one() -> Self {
        Workers::finite(1)
    }

    /// Number of OS threads to actually use for `ntasks` tasks, capped by what
    /// the host offers. Accounting always uses the requested count; execution
    /// never needs more threads than tasks.
    pub fn threads_for(&self, ntasks: usize) -> usize {
        let host = std::thread::available_parallelism()
            .map(|v| v.get())
            .unwrap_or(1);
        let requested = match self {
            Workers::Finite(w) => w.get().min(usize::MAX as u64) as usize,
            Workers::Unbounded => usize::MAX,
        };
        requested.min(host).min(ntasks).max(1)
    }
}

impl std::str::FromStr for Workers {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("inf") {
            return Ok(Workers::Unbounded);
        }
        let w: u64 = s
            .parse()
            .map_err(|_| format!("invalid worker count: {s:?}"))?;
        if w == 0 {
            return Err("worker count must be >= 1".into());
        }
        Ok(Workers::finite(w))
    }
}

impl std::fmt::Display for Workers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Workers::Finite(w) => write!(f, "{w}"),
            Workers::Unbounded => write!(f, "inf"),
        }
    }
}

/// Fold per-task meter deltas of one parallel level into a wall cost.
///
/// Tasks are dispatched in waves of `workers` in task order; each wave costs
/// its maximum task. This is the accounting the shared meter advances by for
/// a parallel level, and it is deterministic regardless of how the OS
/// actually schedules the worker threads.
pub fn fold_waves(task_units: &[u64], workers: Workers) -> u64 {
    if task_units.is_empty() {
        return 0;
    }
    let wave = match workers {
        Workers::Finite(w) => (w.get() as usize).min(task_units.len()),
        Workers::Unbounded => task_units.len(),
    };
    task_units
        .chunks(wave)
        .map(|c| c.iter().copied().max().unwrap_or(0))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_waves_basic() {
        let costs = [7, 16, 16, 16];
        assert_eq!(fold_waves(&costs, Workers::Unbounded), 16);
        assert_eq!(fold_waves(&costs, Workers::finite(1)), 55);
        assert_eq!(fold_waves(&costs, Workers::finite(2)), 16 + 16);
        assert_eq!(fold_waves(&costs, Workers::finite(3)), 16 + 16);
        assert_eq!(fold_waves(&[], Workers::finite(4)), 0);
    }

    #[test]
    fn workers_parse() {
        assert_eq!("inf".parse::<Workers>().unwrap(), Workers::Unbounded);
        assert_eq!("4".parse::<Workers>().unwrap(), Workers::finite(4));
        assert!("0".parse::<Workers>().is_err());
        assert!("x".parse::<Workers>().is_err());
    }

    #[test]
    fn meter_monotone() {
        let m = FlopMeter::new();
        let mark = m.mark();
        m.add(27);
        m.add(3);
        assert_eq!(m.delta(mark), 30);
        assert_eq!(m.thirds(), 30);
        assert_eq!(m.flops(), 10.0);
    }
}

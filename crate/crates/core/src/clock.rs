//! Injectable monotonic clocks.
//!
//! Pipeline stages and the latency harness read time through [`Clock`] so
//! tests can substitute [`FakeClock`] and get bit-reproducible timings.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

pub trait Clock: Send + Sync {
    /// Time elapsed since an arbitrary fixed origin.
    fn now(&self) -> Duration;
}

#[derive(Debug, Clone, Copy)]
pub struct RealClock {
    origin: Instant,
}

impl RealClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for RealClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for RealClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
}

/// Deterministic clock counting integer nanoseconds.
///
/// Time moves only through [`FakeClock::advance`] or, if configured, by a
/// fixed tick after every read.
#[derive(Debug, Default)]
pub struct FakeClock {
    nanos: AtomicU64,
    tick_nanos: u64,
}

impl FakeClock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Clock that advances by `tick` after each [`Clock::now`] read, so a
    /// start/stop pair around any call measures exactly `tick`.
    pub fn ticking(tick: Duration) -> Self {
        Self {
            nanos: AtomicU64::new(0),
            tick_nanos: tick.as_nanos() as u64,
        }
    }

    pub fn advance(&self, by: Duration) {
        self.nanos.fetch_add(by.as_nanos() as u64, Ordering::SeqCst);
    }

    pub fn shared() -> Arc<Self> {
        Arc::new(Self::new())
    }
}

impl Clock for FakeClock {
    fn now(&self) -> Duration {
        Duration::from_nanos(self.nanos.fetch_add(self.tick_nanos, Ordering::SeqCst))
    }
}

/// Milliseconds between two clock readings, as a float.
pub fn elapsed_ms(start: Duration, end: Duration) -> f64 {
    end.saturating_sub(start).as_nanos() as f64 / 1e6
}

/// Converts a millisecond cost to a `Duration` at nanosecond resolution.
pub fn ms(millis: f64) -> Duration {
    Duration::from_nanos((millis * 1e6).round() as u64)
}

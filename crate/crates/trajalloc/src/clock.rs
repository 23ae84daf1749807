use std::sync::OnceLock;
use std::time::Instant;

use trajalloc_core::clock::Clock;

/// Monotonic wall clock, seconds since first use in the process.
#[derive(Debug, Clone, Copy, Default)]
pub struct StdClock;

impl Clock for StdClock {
    fn now(&self) -> f64 {
        static ORIGIN: OnceLock<Instant> = OnceLock::new();
        ORIGIN.get_or_init(Instant::now).elapsed().as_secs_f64()
    }
}

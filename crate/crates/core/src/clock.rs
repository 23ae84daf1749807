//! Time source abstraction so the solver and optimizers can honour wall-clock
//! budgets without depending on `std`.

/// Monotonic clock returning seconds since an arbitrary origin.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Clock that never advances. Budgets are then governed by iteration caps only.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

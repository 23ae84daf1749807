//! Minimum-control trajectories through convex corridors with learned time
//! allocation.
//!
//! The crate is `no_std` and needs only `alloc`. Everything that touches the
//! file system, the wall clock or threads lives in the companion `trajalloc`
//! crate; the pieces here are pure functions of their inputs.
//!
//! Pipeline, bottom-up:
//!
//! * [`polynomial`]: monomial basis, piecewise trajectories, exact control cost.
//! * [`corridor`]: H-polytopes, synthetic box chains, padded network input.
//! * [`qp_builder`]: assembles `min cᵀQ(t)c  s.t. A(t)c = b, G(t)c ≤ h`.
//! * [`qp_solver`]: dense Mehrotra predictor-corrector interior point method.
//! * [`implicit_diff`]: sensitivities of the QP solution w.r.t. durations.
//! * [`time_opt`]: reference times, uniform allocation, descent baselines.
//! * [`allocnet`]: the MLP time allocator and its training loop.
//! * [`dataset`]: synthetic labelled instances.
//! * [`verify`]: independent post-solve constraint re-check.

#![no_std]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod allocnet;
pub mod clock;
pub mod corridor;
pub mod dataset;
mod error;
pub mod implicit_diff;
pub mod linalg;
pub mod math;
pub mod polynomial;
pub mod qp_builder;
pub mod qp_solver;
pub mod time_opt;
pub mod verify;

pub use error::{Error, Result};

/// Lower bound on every segment duration, in seconds.
pub const T_MIN: f64 = 0.05;

/// Maximum number of faces a corridor polytope may carry.
pub const F_MAX_LIMIT: usize = 50;

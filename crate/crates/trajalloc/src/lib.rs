//! File formats, parallel execution, benchmarking and the command-line tool
//! built on `trajalloc-core`.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod clock;
pub mod export;
pub mod gradcheck;
pub mod io;
pub mod parallel;

pub use trajalloc_core as core;

use rayon::prelude::*;
use trajalloc_core::allocnet::{Gradients, SampleLoss, SampleMap, Serial};
use trajalloc_core::Result;

/// Evaluates batch samples on the rayon pool. Results come back in index
/// order, so the reduction is the same as [`Serial`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Rayon;

impl SampleMap for Rayon {
    fn map(
        &self,
        n: usize,
        f: &(dyn Fn(usize) -> Result<(SampleLoss, Gradients)> + Sync),
    ) -> Vec<Result<(SampleLoss, Gradients)>> {
        (0..n).into_par_iter().map(f).collect()
    }
}

/// [`Serial`] or [`Rayon`].
pub fn sample_map(serial: bool) -> &'static dyn SampleMap {
    if serial {
        &Serial
    } else {
        &Rayon
    }
}

//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the helpers run on the global rayon
//! pool; without it they compile to plain loops and rayon is not linked at
//! all. A process-wide switch ([`set_sequential`]) forces the sequential path
//! at runtime, which the benches use to compare both schedules in one build.
//!
//! All helpers preserve index order, so callers that reduce over the returned
//! buffers in index order get bit-identical results under every schedule.

#[cfg(feature = "parallel")]
use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force or release the sequential fallback at runtime.
#[cfg(feature = "parallel")]
pub fn set_sequential(sequential: bool) {
    FORCE_SEQUENTIAL.store(sequential, Ordering::Relaxed);
}

/// Without the `parallel` feature every helper is already sequential.
#[cfg(not(feature = "parallel"))]
pub fn set_sequential(_sequential: bool) {}

/// True when helpers run their sequential path.
pub fn is_sequential() -> bool {
    #[cfg(feature = "parallel")]
    {
        FORCE_SEQUENTIAL.load(Ordering::Relaxed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        true
    }
}

/// Map `f` over `items`, returning results in input order.
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !is_sequential() {
            use rayon::prelude::*;
            return items.par_iter().map(&f).collect();
        }
    }
    items.iter().map(f).collect()
}

/// Map `f` over an index range, returning results in index order.
pub fn par_map_range<U, F>(len: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !is_sequential() {
            use rayon::prelude::*;
            return (0..len).into_par_iter().map(&f).collect();
        }
    }
    (0..len).map(f).collect()
}

/// Apply `f` to equal-size mutable chunks of `data`, passing the chunk index.
///
/// `data.len()` must be a multiple of `chunk`. Each chunk is written by
/// exactly one invocation, so the fill is race-free and order-independent.
pub fn par_chunks_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    debug_assert_eq!(data.len() % chunk.max(1), 0);
    #[cfg(feature = "parallel")]
    {
        if !is_sequential() {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

//! Data-parallel map with a sequential fallback.
//!
//! Built with the `parallel` feature (the default) these helpers fan work out
//! over rayon; without it they run plain iterators. Results always come back
//! in input order, so downstream reductions and file output are byte-identical
//! in both modes.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// True when this build fans work out over a thread pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Sizes the global thread pool. Returns false when this build has no pool to
/// configure (sequential fallback) or the pool was already started.
pub fn configure_threads(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        false
    }
}

/// Maps `f` over `items`, preserving input order.
#[cfg(feature = "parallel")]
pub fn map_ordered<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_ordered<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

/// Maps a fallible `f` over `items`. On failure the FIRST error in input
/// order is returned, regardless of completion order across threads.
pub fn try_map_ordered<T, U, E, F>(items: Vec<T>, f: F) -> Result<Vec<U>, E>
where
    T: Send,
    U: Send,
    E: Send,
    F: Fn(T) -> Result<U, E> + Sync + Send,
{
    let results = map_ordered(items, f);
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        out.push(r?);
    }
    Ok(out)
}

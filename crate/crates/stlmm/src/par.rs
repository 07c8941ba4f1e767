//! Data-parallel map helpers.
//!
//! With the default `parallel` feature the per-subject and per-replica maps
//! run on rayon; without it they are plain sequential loops. Reductions over
//! the mapped results always happen afterwards in index order, so outputs are
//! bit-identical regardless of feature flags or thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Output order matches input order.
pub(crate) fn map_collect<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Maps `f` over an index range, in parallel when enabled.
pub(crate) fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Runs `f` inside a rayon pool capped at `threads` workers (1 forces fully
/// sequential execution). Without the `parallel` feature this just calls `f`.
///
/// The CLI uses this to honor `STLMM_THREADS`; the benches use it to compare
/// the parallel core against its sequential fallback.
#[cfg(feature = "parallel")]
pub fn with_thread_cap<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("failed to build thread pool")
        .install(f)
}

#[cfg(not(feature = "parallel"))]
pub fn with_thread_cap<R>(threads: usize, f: impl FnOnce() -> R) -> R {
    let _ = threads;
    f()
}

//! Data-parallel execution of sampling loops.
//!
//! Every hot loop in the crate (Jacobian sampling, pair sweeps, trajectory
//! batches) goes through [`map`]. With the `parallel` feature the work is
//! spread over the rayon pool; without it, or inside [`sequential`], the same
//! closure runs on the calling thread. Results always come back in input
//! order, so max-reductions over them are order independent.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with parallel iteration disabled on the current thread.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    let previous = FORCE_SEQUENTIAL.with(|flag| flag.replace(true));
    let out = f();
    FORCE_SEQUENTIAL.with(|flag| flag.set(previous));
    out
}

/// True when [`map`] would dispatch to rayon from this thread.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.with(|flag| flag.get())
}

/// Caps the global worker pool. A no-op in sequential builds.
pub fn configure_threads(threads: usize) -> Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(|e| e.to_string())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(())
    }
}

pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
    }
    items.iter().map(f).collect()
}

/// Like [`map`] for fallible closures; returns the first error in input order.
pub fn try_map<T, R, E, F>(items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map(items, f).into_iter().collect()
}

//! Order-preserving map over independent work items.
//!
//! With the `parallel` feature the map runs on rayon when the caller asks for
//! it; otherwise, or with the feature off, it runs sequentially. Output order
//! always matches input order.
//!
//! Work items are backend calls, which wait on the network rather than the
//! CPU, so top-level maps use a dedicated pool of `IO_THREADS` workers instead
//! of rayon's CPU-sized global pool.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Worker count of the pool used by top-level maps.
pub const IO_THREADS: usize = 16;

#[cfg(feature = "parallel")]
fn io_pool() -> Option<&'static rayon::ThreadPool> {
    static POOL: std::sync::OnceLock<Option<rayon::ThreadPool>> = std::sync::OnceLock::new();
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(IO_THREADS)
            .thread_name(|i| format!("agent-graph-io-{i}"))
            .build()
            .ok()
    })
    .as_ref()
}

pub fn map<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel && items.len() > 1 {
        // Inside a pool already (e.g. a benchmark's item pool): stay there.
        if rayon::current_thread_index().is_some() {
            return items.par_iter().map(f).collect();
        }
        if let Some(pool) = io_pool() {
            return pool.install(|| items.par_iter().map(f).collect());
        }
        return items.par_iter().map(f).collect();
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

/// Runs `f` inside a pool of `threads` workers (parallel builds only).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if threads > 1 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            return pool.install(f);
        }
    }
    let _ = threads;
    f()
}

pub const fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

//! Thread-pool control and order-stable parallel primitives.
//!
//! Results must be bit-identical across thread counts, so reductions never
//! rely on rayon's join order: inputs are split into fixed-size chunks,
//! each chunk is reduced sequentially, and the per-chunk results are folded
//! in chunk order on the calling thread. The pool itself can be swapped at
//! any time via [`configure_threads`]; in-flight work keeps the pool it
//! started with.

use once_cell::sync::Lazy;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};
use std::sync::{Arc, Mutex};

/// Chunk length used by the order-stable reductions.
pub const CHUNK: usize = 8192;

static POOL: Lazy<Mutex<Option<Arc<ThreadPool>>>> = Lazy::new(|| Mutex::new(None));

fn build_pool(threads: usize) -> Arc<ThreadPool> {
    Arc::new(
        ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("sareg-{i}"))
            .build()
            .expect("failed to build thread pool"),
    )
}

/// Sets the crate-wide thread count, replacing any existing pool.
pub fn configure_threads(threads: usize) {
    let pool = build_pool(threads.max(1));
    *POOL.lock().unwrap() = Some(pool);
}

/// Thread count requested via `SAREG_THREADS`, if set and valid.
pub fn threads_from_env() -> Option<usize> {
    std::env::var("SAREG_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// The crate-wide pool, built on first use from `SAREG_THREADS` or the
/// available parallelism.
pub fn pool() -> Arc<ThreadPool> {
    let mut guard = POOL.lock().unwrap();
    guard
        .get_or_insert_with(|| {
            let threads = threads_from_env().unwrap_or_else(|| {
                std::thread::available_parallelism().map_or(1, |n| n.get())
            });
            build_pool(threads)
        })
        .clone()
}

/// Number of worker threads in the active pool.
pub fn current_threads() -> usize {
    pool().current_num_threads()
}

/// Sum of `f(i)` for `i in 0..n`, reduced in a fixed order independent of
/// the thread count.
pub fn sum_chunked<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    if n == 0 {
        return 0.0;
    }
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<f64> = pool().install(|| {
        (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let start = c * CHUNK;
                let end = (start + CHUNK).min(n);
                let mut acc = 0.0;
                for i in start..end {
                    acc += f(i);
                }
                acc
            })
            .collect()
    });
    partials.iter().sum()
}

/// Writes `f(i)` into every slot of `out` in parallel. Each slot depends only
/// on its own index, so the result does not depend on scheduling.
pub fn fill_slots<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    pool().install(|| {
        out.par_iter_mut()
            .enumerate()
            .for_each(|(i, slot)| *slot = f(i));
    });
}

/// In-place update of every slot, parallel over independent indices.
pub fn update_slots<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync,
{
    pool().install(|| {
        out.par_iter_mut()
            .enumerate()
            .for_each(|(i, slot)| f(i, slot));
    });
}

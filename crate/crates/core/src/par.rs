//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! they run on the calling thread. Every helper partitions work so that each
//! output element is computed by the same arithmetic in either mode, so
//! results are bit-identical regardless of the feature or thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Row-wise work below this many matrix entries stays on the calling thread.
pub const MIN_PARALLEL_ENTRIES: usize = 1 << 15;

/// Visits each `cols`-wide row of a row-major buffer mutably.
pub fn for_each_row_mut<F>(data: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if data.len() >= MIN_PARALLEL_ENTRIES {
        data.par_chunks_mut(cols).enumerate().for_each(|(i, row)| f(i, row));
        return;
    }
    data.chunks_mut(cols).enumerate().for_each(|(i, row)| f(i, row));
}

/// Maps each `cols`-wide row of a row-major buffer to a scalar.
pub fn map_rows<F>(data: &[f64], cols: usize, f: F) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if data.len() >= MIN_PARALLEL_ENTRIES {
        return data.par_chunks(cols).map(f).collect();
    }
    data.chunks(cols).map(f).collect()
}

/// Maps independent work items, preserving order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
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

/// Runs `f` inside a pool bounded to `jobs` threads (0 = library default).
pub fn with_jobs<R, F>(jobs: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    if jobs > 0 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            return pool.install(f);
        }
    }
    let _ = jobs;
    f()
}

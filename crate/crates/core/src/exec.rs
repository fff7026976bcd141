//! Data-parallel execution helpers.
//!
//! With the `parallel` feature the helpers fan out over rayon's global pool;
//! without it (or after [`set_parallel`]`(false)`) they run the same closures
//! sequentially in index order. Every helper produces results in input order,
//! so both paths yield identical outputs.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Rows per task below which splitting is not worth the scheduling cost.
const MIN_ROWS_PER_TASK: usize = 32;

/// Enables or disables the parallel path at runtime. Has no effect when the
/// crate was built without the `parallel` feature.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

/// Number of worker threads the parallel path will use.
pub fn workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            return rayon::current_num_threads();
        }
    }
    1
}

/// Runs `f(first_row, chunk)` over disjoint row blocks of a row-major buffer.
pub fn for_each_row_block<F>(data: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    if row_len == 0 || data.is_empty() {
        return;
    }
    let rows = data.len() / row_len;
    #[cfg(feature = "parallel")]
    {
        if is_parallel() && rows >= 2 * MIN_ROWS_PER_TASK {
            use rayon::prelude::*;
            let tasks = rayon::current_num_threads().max(1) * 4;
            let block_rows = rows.div_ceil(tasks).max(MIN_ROWS_PER_TASK);
            data.par_chunks_mut(block_rows * row_len)
                .enumerate()
                .for_each(|(i, chunk)| f(i * block_rows, chunk));
            return;
        }
    }
    let _ = rows;
    f(0, data);
}

/// Order-preserving map over a slice.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() && items.len() > 1 {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
    }
    items.iter().map(f).collect()
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() && n > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

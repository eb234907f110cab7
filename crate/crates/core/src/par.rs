//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) row loops and batch maps run on the
//! rayon pool. Every parallel path splits work into independent units whose
//! internal arithmetic order is fixed, so results are bitwise identical to
//! the sequential path. Parallelism can also be switched off at runtime with
//! [`set_enabled`], which the benches use to compare both paths in one build.

use std::sync::atomic::{AtomicBool, Ordering};

static ENABLED: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Whether parallel execution is compiled in and currently enabled.
pub fn enabled() -> bool {
    cfg!(feature = "parallel") && ENABLED.load(Ordering::Relaxed)
}

/// Toggle the runtime switch. Has no effect without the `parallel` feature.
pub fn set_enabled(on: bool) {
    ENABLED.store(on, Ordering::Relaxed);
}

/// Minimum number of scalar operations before a row loop is worth splitting.
const MIN_PARALLEL_WORK: usize = 1 << 14;

/// Apply `f(row_index, row)` to every `width`-sized chunk of `data`.
pub fn for_each_row_mut<F>(data: &mut [f64], width: usize, work_per_row: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    let rows = data.len() / width;
    #[cfg(feature = "parallel")]
    {
        if enabled() && rows > 1 && rows.saturating_mul(work_per_row) >= MIN_PARALLEL_WORK {
            use rayon::prelude::*;
            data.par_chunks_mut(width)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
    }
    let _ = (rows, work_per_row);
    data.chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
}

/// Order-preserving map over a slice of independent work items.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if enabled() && items.len() > 1 {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
    }
    items.iter().map(f).collect()
}

//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the maps below run on rayon; without it (or
//! after [`set_sequential`]) they run in a plain loop. Every helper produces
//! one value per index and any reduction happens afterwards in index order,
//! so results are bit-identical regardless of the thread count.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force the sequential path even when the `parallel` feature is enabled.
pub fn set_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::Relaxed);
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// `(0..n).map(f).collect()`, in parallel when enabled.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Fill `out` in chunks of `width`, chunk `i` written by `f(i, chunk)`.
pub fn for_each_chunk<F>(out: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    assert!(width > 0 && out.len() % width == 0);
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            use rayon::prelude::*;
            out.par_chunks_mut(width).enumerate().for_each(|(i, c)| f(i, c));
            return;
        }
    }
    out.chunks_mut(width).enumerate().for_each(|(i, c)| f(i, c));
}

/// Sum of `f(i)` over `0..n`, reduced in index order.
pub fn sum_range<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_range(n, f).into_iter().sum()
}

/// Configure the global pool size (e.g. from `RIESZFLOW_THREADS`).
/// Returns false if the pool was already initialized or parallelism is off.
pub fn init_threads(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        return rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_ok();
    }
    #[allow(unreachable_code)]
    {
        let _ = n;
        false
    }
}

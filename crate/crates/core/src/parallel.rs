//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature (on by default) the helpers here dispatch to rayon.
//! Without it, or when the process-wide mode is set to [`ExecMode::Sequential`],
//! everything runs on the calling thread. Results are bit-identical in both modes:
//! work items never share accumulators.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

static MODE: AtomicU8 = AtomicU8::new(if cfg!(feature = "parallel") { 1 } else { 0 });

impl ExecMode {
    pub fn current() -> Self {
        match MODE.load(Ordering::Relaxed) {
            1 if cfg!(feature = "parallel") => ExecMode::Parallel,
            _ => ExecMode::Sequential,
        }
    }

    /// Sets the process-wide mode. `Parallel` is ignored without the `parallel` feature.
    pub fn set(mode: ExecMode) {
        MODE.store(matches!(mode, ExecMode::Parallel) as u8, Ordering::Relaxed);
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if ExecMode::current() == ExecMode::Parallel {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if ExecMode::current() == ExecMode::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
const MIN_WORK: usize = 1 << 16;

/// Runs `f(index, chunk)` over consecutive `chunk_len`-sized chunks of `data`.
///
/// Falls back to the calling thread when the total work estimate is below
/// `min_work`, where rayon's scheduling overhead dominates.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, work: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if ExecMode::current() == ExecMode::Parallel && work >= MIN_WORK {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = work;
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

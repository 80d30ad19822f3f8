//! Execution policy for data-parallel loops.
//!
//! With the `parallel` feature, [`Execution::Parallel`] fans work out over the
//! rayon pool; without it every policy runs sequentially. Callers always get
//! results in index order, so reductions are deterministic.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

static DEFAULT: AtomicU8 = AtomicU8::new(0);

/// Policy used by estimators that are not handed one explicitly.
pub fn default_execution() -> Execution {
    match DEFAULT.load(Ordering::Relaxed) {
        0 => Execution::Parallel,
        _ => Execution::Sequential,
    }
}

pub fn set_default_execution(exec: Execution) {
    let tag = match exec {
        Execution::Parallel => 0,
        Execution::Sequential => 1,
    };
    DEFAULT.store(tag, Ordering::Relaxed);
}

pub fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}

/// `(0..n).map(f)` under the given policy, collected in index order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Fixed chunking of `total` samples; chunk boundaries never depend on the
/// policy.
pub const CHUNK: usize = 4096;

pub fn chunks(total: usize) -> impl Iterator<Item = (usize, usize)> + Clone {
    let n = total.div_ceil(CHUNK);
    (0..n).map(move |i| (i, CHUNK.min(total - i * CHUNK)))
}

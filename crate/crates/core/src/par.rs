//! Data-parallel fan-out with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] maps over a
//! rayon pool; without it every call runs sequentially. Results are always
//! returned in input order, so outputs do not depend on the execution mode.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether work will actually be spread across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `f(index, item)` for every item, in order.
pub fn map_indexed<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = exec;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// `f(i)` for `i` in `0..n`, in order.
pub fn map_range<R, F>(n: usize, exec: Execution, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Fill `out[i] = f(i)` in place.
pub fn fill<R, F>(out: &mut [R], exec: Execution, f: F)
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        out.par_iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        return;
    }
    let _ = exec;
    for (i, v) in out.iter_mut().enumerate() {
        *v = f(i);
    }
}

//! Data-parallel fan-out with a sequential fallback.
//!
//! With the `parallel` feature, index maps run on the current rayon pool.
//! Without it, or inside [`with_jobs`] with `jobs == 1`, they run in order on
//! the calling thread. Results are always collected in index order, so output
//! never depends on scheduling.

use std::cell::Cell;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

thread_local! {
    static FORCED_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

pub fn current() -> Execution {
    if cfg!(feature = "parallel") && !FORCED_SEQUENTIAL.with(Cell::get) {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

/// Runs `f` with the given execution mode on this thread.
pub fn with_execution<R>(mode: Execution, f: impl FnOnce() -> R) -> R {
    let prev = FORCED_SEQUENTIAL.with(|c| c.replace(mode == Execution::Sequential));
    let out = f();
    FORCED_SEQUENTIAL.with(|c| c.set(prev));
    out
}

/// Runs `f` with at most `jobs` workers. `jobs == 0` means the library default.
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    if jobs == 1 {
        return with_execution(Execution::Sequential, f);
    }
    #[cfg(feature = "parallel")]
    {
        if jobs > 1 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                return pool.install(f);
            }
        }
    }
    f()
}

pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match current() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

pub fn try_map_indexed<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(n, f).into_iter().collect()
}

pub fn map_slice<'a, S, T, F>(items: &'a [S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&'a S) -> T + Sync + Send,
{
    map_indexed(items.len(), |i| f(&items[i]))
}

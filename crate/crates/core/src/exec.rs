//! Sequential or rayon-backed execution of independent work items.
//!
//! Without the `parallel` feature every strategy runs sequentially. Results
//! are always returned in input order, so the choice never changes output.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    /// Rayon's global pool.
    #[default]
    Parallel,
    /// Dedicated pool with this many worker threads.
    Threads(usize),
}

impl Execution {
    pub fn from_threads(threads: usize) -> Self {
        match threads {
            0 => Execution::Parallel,
            1 => Execution::Sequential,
            n => Execution::Threads(n),
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self != Execution::Sequential
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(exec: Execution, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        match exec {
            Execution::Sequential => items.into_iter().map(f).collect(),
            Execution::Parallel => items.into_par_iter().map(f).collect(),
            Execution::Threads(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => pool.install(|| items.into_par_iter().map(f).collect()),
                Err(err) => {
                    log::warn!("could not build {n}-thread pool ({err}), running sequentially");
                    items.into_iter().map(f).collect()
                }
            },
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = exec;
        items.into_iter().map(f).collect()
    }
}

/// Runs `f(index, chunk)` over consecutive `chunk_len`-sized pieces of `data`.
pub fn for_each_chunk_mut<T, F>(exec: Execution, data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = exec;
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

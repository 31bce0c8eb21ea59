//! Batch execution backend.
//!
//! With the `parallel` feature the executor owns a rayon pool sized by the
//! requested worker count; without it, batches run in a plain loop. Either
//! way `map` returns results in index order, so callers see identical
//! output for any worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub struct Executor {
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
    workers: usize,
}

impl Executor {
    /// A single-threaded executor.
    pub fn sequential() -> Self {
        Self {
            #[cfg(feature = "parallel")]
            pool: None,
            workers: 1,
        }
    }

    /// An executor with `workers` threads; `0` means one per available core.
    /// Falls back to sequential execution when built without `parallel`.
    pub fn new(workers: usize) -> Self {
        let workers = if workers == 0 {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        } else {
            workers
        };
        #[cfg(feature = "parallel")]
        {
            if workers > 1 {
                match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                    Ok(pool) => {
                        return Self {
                            pool: Some(pool),
                            workers,
                        }
                    }
                    Err(err) => log::warn!("falling back to sequential evaluation: {err}"),
                }
            }
        }
        let _ = workers;
        Self::sequential()
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Evaluates `f(0..n)` and returns the results in index order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
        (0..n).map(f).collect()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::sequential()
    }
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor")
            .field("workers", &self.workers)
            .finish()
    }
}

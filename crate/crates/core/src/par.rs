//! Data-parallel helpers with a sequential fallback.
//!
//! Results are always returned in index order, so callers that reduce them
//! sequentially get bit-identical output whatever the thread count.

/// How a batch of independent work items is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Sequential,
    /// rayon's global pool; same as `Sequential` without the `parallel` feature.
    #[default]
    Rayon,
}

impl Parallelism {
    /// `f(0), f(1), ..., f(n - 1)` collected in order.
    pub fn map_indexed<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Send + Sync,
    {
        match self {
            Parallelism::Sequential => (0..n).map(f).collect(),
            Parallelism::Rayon => par_map(n, f),
        }
    }

    /// Like [`map_indexed`](Self::map_indexed) but stops at the first error (by index).
    pub fn try_map_indexed<T, E, F>(self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Send + Sync,
    {
        self.map_indexed(n, f).into_iter().collect()
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    (0..n).map(f).collect()
}

/// Number of worker threads `Rayon` would use.
pub fn available_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

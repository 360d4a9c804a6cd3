//! Replica-level parallelism.
//!
//! Replicas are independent given the master seed, so mapping them in
//! parallel or sequentially yields identical, identically ordered output.

use crate::error::Result;

/// Evaluate `f` on replicas `0..count` one after another.
pub fn map_replicas_sequential<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(u32) -> Result<T>,
{
    (0..count as u32).map(f).collect()
}

/// Evaluate `f` on replicas `0..count` on the rayon pool.
#[cfg(feature = "parallel")]
pub fn map_replicas_parallel<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u32) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    (0..count as u32).into_par_iter().map(f).collect()
}

/// Parallel when the `parallel` feature is on, sequential otherwise.
#[cfg(feature = "parallel")]
pub fn map_replicas<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u32) -> Result<T> + Sync + Send,
{
    map_replicas_parallel(count, f)
}

#[cfg(not(feature = "parallel"))]
pub fn map_replicas<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u32) -> Result<T> + Sync + Send,
{
    map_replicas_sequential(count, f)
}

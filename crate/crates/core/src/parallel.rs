//! Batch helpers. With the `parallel` feature (default) batches fan out over
//! the rayon pool; without it they run on the calling thread. Output order
//! always matches input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map_batch<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_batch_sequential(items, f)
    }
}

pub fn map_batch_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// True when batches run on the rayon pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

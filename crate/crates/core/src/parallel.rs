//! Ordered map over work items on a fixed-size worker pool.
//!
//! Every item draws randomness from its own substream, so the result is the
//! same for any worker count.

use crate::error::Result;

pub fn try_map<T, F>(workers: usize, count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| crate::error::invalid(format!("cannot start worker pool: {e}")))?;
        return pool.install(|| (0..count).into_par_iter().map(&f).collect());
    }
    let _ = workers;
    (0..count).map(f).collect()
}

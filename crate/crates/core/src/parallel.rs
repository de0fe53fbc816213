//! Thread-count control. Every parallel kernel in the crate writes disjoint
//! outputs and reduces in a fixed order, so results never depend on the
//! number of workers.

use rayon::ThreadPoolBuilder;

use crate::error::{GmpError, Result};

/// Environment variable consulted for the default worker count.
pub const THREADS_ENV: &str = "GMP_THREADS";

/// Runs `f` on a dedicated pool with `threads` workers; `0` lets rayon pick.
pub fn with_threads<R, F>(threads: usize, f: F) -> Result<R>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    let pool = ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| GmpError::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Worker count from `GMP_THREADS`, or 0 (automatic) when unset or invalid.
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

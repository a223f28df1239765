//! Fan-out over independent replicas.
//!
//! Each replica owns its random stream, so results are identical whether
//! the work runs on a thread pool or in a plain loop. Output is always in
//! replica order.

/// Runs `f` on replicas `0..count` across the rayon pool.
#[cfg(feature = "parallel")]
pub fn parallel<T, F>(count: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..count).into_par_iter().map(f).collect()
}

/// Runs `f` on replicas `0..count` in order on the calling thread.
pub fn sequential<T, F>(count: u64, f: F) -> Vec<T>
where
    F: Fn(u64) -> T,
{
    (0..count).map(f).collect()
}

/// Default strategy: rayon when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub fn map_replicas<T, F>(count: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    parallel(count, f)
}

#[cfg(not(feature = "parallel"))]
pub fn map_replicas<T, F>(count: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    sequential(count, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let v = map_replicas(100, |r| r * r);
        assert_eq!(v, (0..100).map(|r| r * r).collect::<Vec<_>>());
        assert_eq!(sequential(100, |r| r * r), v);
    }
}

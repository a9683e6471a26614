//! Fan-out over independent runs. Results always come back in input order.

/// Plain sequential map; the reference the parallel path must match.
pub fn map_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Maps on a dedicated pool of `workers` threads.
#[cfg(feature = "parallel")]
pub fn map_parallel<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running sequentially");
            map_sequential(items, f)
        }
    }
}

/// Parallel when the feature is on and `workers > 1`, sequential otherwise.
pub fn map_runs<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers > 1 && items.len() > 1 {
        return map_parallel(items, workers, f);
    }
    let _ = workers;
    map_sequential(items, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let items: Vec<u64> = (0..100).collect();
        let seq = map_sequential(&items, |x| x * x);
        for w in [0, 1, 2, 4] {
            assert_eq!(map_runs(&items, w, |x| x * x), seq);
        }
    }
}

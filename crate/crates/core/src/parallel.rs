//! Deterministic parallel map over an index range.

use std::num::NonZeroUsize;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "CHAMBERFLOW_THREADS";

/// Worker count from `CHAMBERFLOW_THREADS`, else the available parallelism.
pub fn default_workers() -> usize {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        return n.max(1);
    }
    std::thread::available_parallelism()
        .map(NonZeroUsize::get)
        .unwrap_or(1)
}

/// Applies `f` to `0..len` on `workers` threads. Each worker takes one
/// contiguous chunk; results are concatenated in index order, so the output
/// never depends on the worker count.
pub fn par_map<T, F>(len: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.max(1).min(len.max(1));
    if workers == 1 {
        return (0..len).map(&f).collect();
    }
    let chunk = len.div_ceil(workers);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let lo = (w * chunk).min(len);
                let hi = ((w + 1) * chunk).min(len);
                scope.spawn(move || (lo..hi).map(f).collect::<Vec<T>>())
            })
            .collect();
        let mut out = Vec::with_capacity(len);
        for h in handles {
            out.extend(h.join().expect("worker panicked"));
        }
        out
    })
}

/// `par_map` over a fallible function; returns the error of the lowest index.
pub fn try_par_map<T, E, F>(len: usize, workers: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync,
{
    par_map(len, workers, f).into_iter().collect()
}

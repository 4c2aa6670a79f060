//! Masked-autoencoder Vision Transformer pretraining and fine-tuning for
//! wireless grid data (spectrograms, CSI, OFDM resource grids), with
//! synthetic data generators and classical channel-estimation baselines.

pub mod error;
pub mod eval;
pub mod model;
pub mod signal;
pub mod sim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

thread_local! {
    static THREAD_OVERRIDE: std::cell::Cell<Option<usize>> = const { std::cell::Cell::new(None) };
}

/// Worker count for per-sample fan-out: a [`with_worker_threads`] override
/// on the calling thread, else `WAVESFM_THREADS` when set to a positive
/// integer, else the available parallelism.
pub fn worker_threads() -> usize {
    if let Some(n) = THREAD_OVERRIDE.with(|c| c.get()) {
        return n;
    }
    std::env::var("WAVESFM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` with [`worker_threads`] pinned to `n` (at least 1) on this thread.
pub fn with_worker_threads<R>(n: usize, f: impl FnOnce() -> R) -> R {
    let prev = THREAD_OVERRIDE.with(|c| c.replace(Some(n.max(1))));
    struct Restore(Option<usize>);
    impl Drop for Restore {
        fn drop(&mut self) {
            THREAD_OVERRIDE.with(|c| c.set(self.0));
        }
    }
    let _restore = Restore(prev);
    f()
}

/// `f(0..n)` spread over [`worker_threads`] scoped threads, results in index order.
pub fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = worker_threads().min(n).max(1);
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| s.spawn(move || (t * chunk..((t + 1) * chunk).min(n)).map(f).collect::<Vec<T>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

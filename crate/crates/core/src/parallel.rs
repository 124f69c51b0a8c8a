//! Scoped-thread helpers with deterministic output order.

use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicUsize, Ordering};

static LIMIT: AtomicUsize = AtomicUsize::new(0);

/// Cap the worker count used when a caller asks for `0` threads.
/// `0` removes the cap.
pub fn set_thread_limit(n: usize) {
    LIMIT.store(n, Ordering::Relaxed);
}

/// Number of worker threads to use when the caller asks for `0`.
pub fn default_threads() -> usize {
    match LIMIT.load(Ordering::Relaxed) {
        0 => std::thread::available_parallelism()
            .map(NonZeroUsize::get)
            .unwrap_or(1),
        n => n,
    }
}

fn resolve(threads: usize) -> usize {
    if threads == 0 {
        default_threads()
    } else {
        threads
    }
}

/// Apply `f` to contiguous chunks of `items` on up to `threads` workers and
/// concatenate the results in input order. `threads == 0` means the
/// default worker count.
pub fn map_chunks<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> Vec<R> + Sync,
{
    let threads = resolve(threads).min(items.len().max(1));
    if threads <= 1 {
        return f(items);
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || f(c))
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

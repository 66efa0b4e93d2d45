//! Deterministic index-based fan-out.
//!
//! Work items are keyed by index; each item derives its randomness from
//! (seed, index), so results are identical for any worker count. Reductions
//! happen on the collected, index-ordered results.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::OnceLock;

use crate::error::Result;

static WORKERS: OnceLock<usize> = OnceLock::new();

/// Set the worker count used by data generation and ensemble evaluation.
/// Has no effect after the first parallel call; 0 is treated as 1.
pub fn set_worker_threads(n: usize) {
    let _ = WORKERS.set(n.max(1));
}

pub fn worker_threads() -> usize {
    *WORKERS.get_or_init(|| 1)
}

/// Run `f(0..count)` across the configured workers and return the results
/// in index order. The first error (by index) wins.
pub fn map_indexed<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = worker_threads().min(count.max(1));
    if workers <= 1 {
        return (0..count).map(&f).collect();
    }

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<T>)>();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let f = &f;
            scope.spawn(move || loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= count {
                    break;
                }
                if tx.send((idx, f(idx))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
    });

    let mut slots: Vec<Option<Result<T>>> = (0..count).map(|_| None).collect();
    for (idx, res) in rx {
        slots[idx] = Some(res);
    }
    let mut out = Vec::with_capacity(count);
    for slot in slots {
        out.push(slot.expect("worker dropped an index")?);
    }
    Ok(out)
}

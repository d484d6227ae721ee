//! Fixed-partition fan-out. Results are returned in input order, so output
//! never depends on the thread count.

use crate::error::{LabError, LabResult};

pub const THREADS_VAR: &str = "RAPL_LAB_THREADS";

/// Thread cap from `RAPL_LAB_THREADS` (default 1).
pub fn thread_count() -> LabResult<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(LabError::Config(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
    }
}

pub fn map<T, R, F>(items: &[T], threads: usize, f: F) -> rapl_core::Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> rapl_core::Result<R> + Sync,
{
    if threads <= 1 || items.len() < 2 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(&f).collect::<rapl_core::Result<Vec<R>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

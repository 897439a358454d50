//! Worker-count control.
//!
//! `USEAN_THREADS` caps the number of workers; `0` (or `1`) selects the
//! single-threaded reference mode. Parallelism is only ever applied across
//! independent output elements, so parallel results are bit-identical to
//! the reference mode.

use std::sync::OnceLock;

static THREADS: OnceLock<usize> = OnceLock::new();

pub fn worker_count() -> usize {
    *THREADS.get_or_init(|| {
        let requested = std::env::var("USEAN_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok());
        let n = match requested {
            Some(0) | Some(1) => return 1,
            Some(n) => n.min(32),
            None => std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
                .min(32),
        };
        // Best effort; a pool may already exist when embedded in a host app.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        n
    })
}

/// Runs `f` over every chunk of `data` (each `chunk_len` long), in parallel
/// when the work is large enough and more than one worker is configured.
/// `f` receives the chunk index and the mutable chunk.
pub fn for_each_chunk_mut<T: Send, F>(data: &mut [T], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    debug_assert!(chunk_len > 0 && data.len().is_multiple_of(chunk_len));
    let small = data.len() < 4096;
    if worker_count() <= 1 || small {
        for (i, chunk) in data.chunks_mut(chunk_len).enumerate() {
            f(i, chunk);
        }
    } else {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len).enumerate().for_each(|(i, chunk)| f(i, chunk));
    }
}

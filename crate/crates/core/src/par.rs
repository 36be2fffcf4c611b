//! Batch mapping with an optional data-parallel backend.
//!
//! With the `parallel` feature (on by default) `map_batch` fans work out
//! over the rayon global pool; without it the call degrades to the plain
//! sequential loop. Output order always matches input order, so results
//! are identical either way and callers can rely on determinism.

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub fn map_batch<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
#[cfg(not(feature = "parallel"))]
pub fn map_batch<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Always-sequential reference used by the benches to measure the speedup.
pub fn map_batch_seq<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Caps the global worker pool at `n` threads. Must run before the first
/// parallel call; later calls fail once the pool exists.
#[cfg(feature = "parallel")]
pub fn limit_threads(n: usize) -> Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

/// Caps the global worker pool at `n` threads. Must run before the first
/// parallel call; later calls fail once the pool exists.
#[cfg(not(feature = "parallel"))]
pub fn limit_threads(_n: usize) -> Result<(), String> {
    Ok(())
}

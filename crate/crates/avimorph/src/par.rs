//! Data-parallel helpers with a sequential fallback.
//!
//! Everything here preserves input order, so results are bit-identical
//! whether the `parallel` feature is enabled or not, and independent of
//! the rayon thread count. Reductions that need a fixed order (gradient
//! accumulation across instances, row sums in the rasterizer) collect
//! per-item results first and fold them sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, preserving order.
#[cfg(feature = "parallel")]
pub fn map_collect<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Map `f` over indices `0..n`, preserving order.
#[cfg(feature = "parallel")]
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Fill disjoint row chunks of a flat buffer in parallel.
/// `f(row, chunk)` writes one row of length `row_len`.
#[cfg(feature = "parallel")]
pub fn for_each_row<F>(buf: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    buf.par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(r, chunk)| f(r, chunk));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_row<F>(buf: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]),
{
    for (r, chunk) in buf.chunks_mut(row_len).enumerate() {
        f(r, chunk);
    }
}

//! Deterministic parallel helpers.
//!
//! Reductions collect per-row partials in row order and fold them sequentially,
//! so results are bit-identical whether the `parallel` feature is enabled or
//! not, and independent of the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map each row index to a partial result, in parallel when available.
/// The returned vector is ordered by row index.
pub(crate) fn map_rows<T, F>(n_rows: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n_rows).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_rows).map(f).collect()
    }
}

/// Run `f(row_index, row_slice)` over disjoint row slices of `data`.
pub(crate) fn for_each_row_mut<T, F>(data: &mut [T], row_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    debug_assert_eq!(data.len() % row_len.max(1), 0);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
}

/// Map over arbitrary items preserving order (used for independent image pairs).
pub(crate) fn map_items<I, T, F>(items: Vec<I>, f: F) -> Vec<T>
where
    I: Send,
    T: Send,
    F: Fn(I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

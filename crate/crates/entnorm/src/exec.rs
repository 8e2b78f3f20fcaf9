//! Data-parallel helpers with a sequential fallback.
//!
//! All batch-level loops in the crate go through these functions. With the
//! `parallel` feature enabled (the default) they fan out over rayon unless
//! sequential mode was requested at runtime via [`set_sequential`]; without
//! the feature they always run sequentially. Outputs preserve input order,
//! so parallel and sequential execution produce identical results.

use std::sync::atomic::{AtomicBool, Ordering};

static SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force sequential execution at runtime (no-op without the `parallel` feature).
pub fn set_sequential(on: bool) {
    SEQUENTIAL.store(on, Ordering::SeqCst);
}

pub fn is_sequential() -> bool {
    if cfg!(feature = "parallel") {
        SEQUENTIAL.load(Ordering::SeqCst)
    } else {
        true
    }
}

/// Order-preserving map over a slice.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if !is_sequential() {
        use rayon::prelude::*;
        return items.par_iter().map(&f).collect();
    }
    items.iter().map(f).collect()
}

/// Order-preserving map over a slice that always runs on the current thread.
pub fn map_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Order-preserving indexed map over `0..n`.
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if !is_sequential() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(&f).collect();
    }
    (0..n).map(f).collect()
}

/// Fill consecutive `width`-sized rows of `data` in place, one call per row.
pub fn fill_rows<F>(data: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert_eq!(data.len() % width.max(1), 0);
    #[cfg(feature = "parallel")]
    if !is_sequential() {
        use rayon::prelude::*;
        data.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
        return;
    }
    for (i, row) in data.chunks_mut(width).enumerate() {
        f(i, row);
    }
}

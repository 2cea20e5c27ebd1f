//! Order-preserving data-parallel maps.
//!
//! With the `parallel` feature (default) the maps run on rayon's global pool;
//! without it they degrade to sequential iteration. Results are collected in
//! input order and every downstream reduction in this crate folds them
//! sequentially, so parallel and sequential runs produce bit-identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, preserving order.
#[cfg(feature = "parallel")]
pub fn map<T: Sync, U: Send, F: Fn(&T) -> U + Sync + Send>(items: &[T], f: F) -> Vec<U> {
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, U, F: Fn(&T) -> U>(items: &[T], f: F) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Map `f` over `0..n`, preserving order.
#[cfg(feature = "parallel")]
pub fn map_range<U: Send, F: Fn(usize) -> U + Sync + Send>(n: usize, f: F) -> Vec<U> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<U, F: Fn(usize) -> U>(n: usize, f: F) -> Vec<U> {
    (0..n).map(f).collect()
}

/// Always-sequential variants, kept available so callers (and the bench
/// suite) can compare against the parallel path in the same build.
pub fn map_seq<T, U, F: Fn(&T) -> U>(items: &[T], f: F) -> Vec<U> {
    items.iter().map(f).collect()
}

pub fn map_range_seq<U, F: Fn(usize) -> U>(n: usize, f: F) -> Vec<U> {
    (0..n).map(f).collect()
}

/// Runtime switch between the two paths.
#[cfg(feature = "parallel")]
pub fn map_range_auto<U: Send, F: Fn(usize) -> U + Sync + Send>(parallel: bool, n: usize, f: F) -> Vec<U> {
    if parallel {
        map_range(n, f)
    } else {
        map_range_seq(n, f)
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_range_auto<U, F: Fn(usize) -> U>(_parallel: bool, n: usize, f: F) -> Vec<U> {
    map_range_seq(n, f)
}

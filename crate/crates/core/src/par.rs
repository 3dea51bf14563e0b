//! Ordered map over an index range, parallel when the `std` feature is on.
//!
//! Output order always follows the input order, so reductions over the result
//! are deterministic regardless of the worker count.

use alloc::vec::Vec;

#[cfg(feature = "std")]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "std"))]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

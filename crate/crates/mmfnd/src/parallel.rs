//! Data-parallel map helpers with a sequential fallback.
//!
//! All per-article work in the pipeline (image decoding, feature
//! extraction, batch inference) is pure, so it can be fanned out with
//! rayon. Building without the `parallel` feature compiles the same
//! call sites down to plain sequential iteration.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, in parallel when the `parallel` feature is
/// enabled and `parallel` is true.
pub fn map_items<T, U, F>(items: &[T], parallel: bool, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items.par_iter().map(&f).collect();
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

/// Fallible variant of [`map_items`]; returns the first error.
pub fn try_map_items<T, U, E, F>(items: &[T], parallel: bool, f: F) -> Result<Vec<U>, E>
where
    T: Sync,
    U: Send,
    E: Send,
    F: Fn(&T) -> Result<U, E> + Sync,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items.par_iter().map(&f).collect();
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

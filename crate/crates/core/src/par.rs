//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers dispatch to rayon; without it, or
//! after [`set_sequential`]`(true)`, they run on the calling thread. Work is
//! always split along fixed row boundaries and never reduced across threads,
//! so results are bitwise identical in both modes.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Rows below this many elements are not worth a rayon split.
const MIN_PAR_ELEMS: usize = 1 << 14;

/// Forces sequential execution at runtime (used by benches and for debugging).
pub fn set_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::Relaxed);
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// Applies `f(row_index, row)` to every `cols`-wide row of `data`.
pub fn for_each_row<F>(data: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if cols == 0 || data.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    if is_parallel() && data.len() >= MIN_PAR_ELEMS {
        use rayon::prelude::*;
        let min_rows = (MIN_PAR_ELEMS / cols).max(1);
        data.par_chunks_mut(cols)
            .enumerate()
            .with_min_len(min_rows)
            .for_each(|(i, row)| f(i, row));
        return;
    }
    for (i, row) in data.chunks_mut(cols).enumerate() {
        f(i, row);
    }
}

/// Maps `f` over `items` preserving order.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

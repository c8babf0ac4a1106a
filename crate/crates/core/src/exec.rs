//! Runtime switch between rayon data parallelism and sequential execution.
//!
//! Every parallel site in the crate maps independent items to owned outputs
//! and reduces in a fixed (input) order, so `Serial` and `Parallel` produce
//! bit-identical results; `Serial` exists to make that guarantee obvious and
//! to give benchmarks a baseline. Building with `--no-default-features`
//! removes rayon entirely, and `Parallel` degrades to the sequential path.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    #[default]
    Parallel,
    Serial,
}

impl ExecMode {
    pub fn from_serial_flag(serial: bool) -> Self {
        if serial {
            ExecMode::Serial
        } else {
            ExecMode::Parallel
        }
    }
}

/// Maps `f` over `items`, preserving input order in the output.
pub fn map_collect<T, U, F>(mode: ExecMode, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if mode == ExecMode::Parallel {
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Maps `f` over an index range, preserving index order in the output.
pub fn map_range<U, F>(mode: ExecMode, n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if mode == ExecMode::Parallel {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

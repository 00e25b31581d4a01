//! Per-sample fan-out with a sequential fallback.
//!
//! With the `parallel` feature the per-sample work runs on the rayon pool;
//! without it (or with [`Execution::Sequential`]) it runs in a plain loop.
//! Results are always returned in index order, so both paths produce
//! identical output.

use crate::error::Result;

/// How independent per-sample work is scheduled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled, and
    /// falls back to [`Execution::Sequential`] otherwise.
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this setting actually runs on multiple workers in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Evaluates `f(0..n)` and returns the results in order, or the error of
/// the lowest failing index.
pub(crate) fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let results: Vec<Result<T>> = if exec.is_parallel() {
        parallel_map(n, &f)
    } else {
        (0..n).map(&f).collect()
    };
    results.into_iter().collect()
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(n: usize, f: &F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(n: usize, f: &F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn order_and_first_error_are_schedule_independent() {
        for exec in [Execution::Sequential, Execution::Parallel] {
            let out = map_indexed(100, exec, |i| Ok(i * i)).unwrap();
            assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
            let err = map_indexed(100, exec, |i| {
                if i % 30 == 29 {
                    Err(Error::Numeric(format!("{i}")))
                } else {
                    Ok(i)
                }
            })
            .unwrap_err();
            assert_eq!(err.to_string(), "numeric failure: 29");
        }
    }
}

//! Deterministic worker pool.
//!
//! All parallel work goes through [`Executor::map`]. Results come back in item
//! order regardless of the worker count, and callers reduce them sequentially
//! in that order, so floating-point sums never depend on scheduling.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::error::{Error, Result};

#[derive(Clone)]
pub struct Executor {
    workers: usize,
    pool: Option<Arc<ThreadPool>>,
}

impl fmt::Debug for Executor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Executor").field("workers", &self.workers).finish()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::sequential()
    }
}

static SEQUENTIAL: Executor = Executor {
    workers: 1,
    pool: None,
};

impl Executor {
    /// Shared inline executor.
    pub fn sequential_ref() -> &'static Executor {
        &SEQUENTIAL
    }

    /// Runs everything inline on the calling thread.
    pub fn sequential() -> Self {
        Self {
            workers: 1,
            pool: None,
        }
    }

    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::invalid("worker count must be at least 1"));
        }
        if workers == 1 {
            return Ok(Self::sequential());
        }
        let pool = ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("esmaml-worker-{i}"))
            .build()
            .map_err(|e| Error::Pool(e.to_string()))?;
        Ok(Self {
            workers,
            pool: Some(Arc::new(pool)),
        })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Maps `f` over `items` and returns the results in item order.
    ///
    /// Every item is evaluated even when some fail. If any failed, the error
    /// names the lowest failing index and carries the number of failures.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> Result<R> + Sync + Send,
    {
        let settled: Vec<Result<R>> = match &self.pool {
            None => items.iter().enumerate().map(|(i, x)| f(i, x)).collect(),
            Some(pool) => pool.install(|| {
                items
                    .par_iter()
                    .enumerate()
                    .map(|(i, x)| f(i, x))
                    .collect()
            }),
        };
        collect_in_order(settled)
    }

    /// [`Executor::map`] over the index range `0..count`.
    pub fn map_range<R, F>(&self, count: usize, f: F) -> Result<Vec<R>>
    where
        R: Send,
        F: Fn(usize) -> Result<R> + Sync + Send,
    {
        let idx: Vec<usize> = (0..count).collect();
        self.map(&idx, |_, &i| f(i))
    }
}

fn collect_in_order<R>(settled: Vec<Result<R>>) -> Result<Vec<R>> {
    let total = settled.len();
    let failures = settled.iter().filter(|r| r.is_err()).count();
    if failures == 0 {
        return Ok(settled.into_iter().map(|r| r.ok().unwrap()).collect());
    }
    let (index, source) = settled
        .into_iter()
        .enumerate()
        .find_map(|(i, r)| r.err().map(|e| (i, e)))
        .unwrap();
    Err(Error::ParallelItems {
        index,
        failures,
        total,
        source: Box::new(source),
    })
}

/// Free-function form of [`Executor::map`] with a throwaway pool.
pub fn deterministic_parallel_map<T, R, F>(items: &[T], f: F, worker_count: usize) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> Result<R> + Sync + Send,
{
    Executor::new(worker_count)?.map(items, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn work(i: usize, x: &u64) -> Result<f64> {
        let mut acc = 0.0f64;
        for k in 0..200 {
            acc += ((*x as f64) * 1.000_1f64.powi(k)).sin();
        }
        Ok(acc + i as f64)
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let items: Vec<u64> = (0..500).collect();
        let one = deterministic_parallel_map(&items, work, 1).unwrap();
        for w in [2, 3, 8] {
            let many = deterministic_parallel_map(&items, work, w).unwrap();
            assert_eq!(one.len(), many.len());
            for (a, b) in one.iter().zip(&many) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let items: Vec<u64> = vec![];
        assert!(deterministic_parallel_map(&items, work, 4).unwrap().is_empty());
    }

    #[test]
    fn failure_reports_lowest_index_after_all_settle() {
        let items: Vec<usize> = (0..1000).collect();
        let seen = std::sync::atomic::AtomicUsize::new(0);
        let err = deterministic_parallel_map(
            &items,
            |i, _| {
                seen.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i == 7 || i == 900 {
                    Err(Error::invalid(format!("boom {i}")))
                } else {
                    Ok(i)
                }
            },
            4,
        )
        .unwrap_err();
        assert_eq!(seen.into_inner(), 1000);
        assert_eq!(err.failing_index(), Some(7));
        match err {
            Error::ParallelItems { failures, total, .. } => {
                assert_eq!(failures, 2);
                assert_eq!(total, 1000);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_workers_rejected() {
        assert!(Executor::new(0).is_err());
    }
}

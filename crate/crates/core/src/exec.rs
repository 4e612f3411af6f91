//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) [`Execution::Parallel`] runs
//! on the rayon global pool; without it every path is sequential. Results
//! are always returned in input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this mode actually runs in parallel in the current build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Ordered map over a slice.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Sum of `f(i)` for `i` in `0..n`.
    pub fn sum_range<F>(self, n: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        // fixed chunking keeps the reduction order independent of the mode
        // and of thread timing, so both modes agree bit for bit
        const CHUNK: usize = 64;
        let chunk = |c: usize| -> f64 { (c * CHUNK..((c + 1) * CHUNK).min(n)).map(&f).sum() };
        let chunks = n.div_ceil(CHUNK);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            let partials: Vec<f64> = (0..chunks).into_par_iter().map(chunk).collect();
            return partials.into_iter().sum();
        }
        (0..chunks).map(chunk).sum()
    }
}

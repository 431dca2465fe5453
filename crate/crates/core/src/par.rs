//! Execution-mode switch for the data-parallel loops.
//!
//! With the `parallel` feature disabled, [`Parallelism::Parallel`] silently
//! runs sequentially. Results never depend on the mode.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    Sequential,
    Parallel,
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Parallel
        } else {
            Parallelism::Sequential
        }
    }
}

impl Parallelism {
    /// Whether work will actually be spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

/// Order-preserving map over a slice.
pub fn map_slice<T, R, F>(items: &[T], mode: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == Parallelism::Parallel {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Order-preserving fallible map; the first error in input order wins.
pub fn try_map_slice<T, R, E, F>(items: &[T], mode: Parallelism, f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map_slice(items, mode, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let xs: Vec<u64> = (0..10_000).collect();
        let seq = map_slice(&xs, Parallelism::Sequential, |x| x * x + 1);
        let par = map_slice(&xs, Parallelism::Parallel, |x| x * x + 1);
        assert_eq!(seq, par);
    }

    #[test]
    fn first_error_in_input_order() {
        let xs: Vec<i32> = (0..1000).collect();
        let r: Result<Vec<i32>, i32> = try_map_slice(&xs, Parallelism::Parallel, |&x| {
            if x % 300 == 299 { Err(x) } else { Ok(x) }
        });
        assert_eq!(r, Err(299));
    }
}

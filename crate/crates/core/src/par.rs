//! Replica-level data parallelism with a sequential fallback.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// `Parallel` when the crate is built with the `parallel` feature.
    pub fn available(self) -> Exec {
        if cfg!(feature = "parallel") {
            self
        } else {
            Exec::Sequential
        }
    }
}

/// `(0..count).map(f)` in order, on the rayon pool when parallel.
pub fn map_indexed<T, F>(exec: Exec, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec.available() {
        Exec::Sequential => (0..count).map(f).collect(),
        Exec::Parallel => parallel_map(count, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T: Send, F: Fn(usize) -> T + Sync + Send>(count: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T: Send, F: Fn(usize) -> T + Sync + Send>(count: usize, f: F) -> Vec<T> {
    (0..count).map(f).collect()
}

/// Collects `Result`s, returning the first error in index order.
pub fn try_map_indexed<T, E, F>(exec: Exec, count: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(exec, count, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_and_equivalence() {
        let f = |i: usize| i * i;
        let a = map_indexed(Exec::Sequential, 100, f);
        let b = map_indexed(Exec::Parallel, 100, f);
        assert_eq!(a, b);
        assert_eq!(a[7], 49);
        let r: Result<Vec<usize>, usize> = try_map_indexed(Exec::Parallel, 10, |i| if i == 3 || i == 6 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(3));
    }
}

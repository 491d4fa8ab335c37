//! Sequential or rayon-backed evaluation of independent work items.
//!
//! Every parallel path produces exactly the values of its sequential
//! counterpart: work items never share random state and results are
//! collected in index order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `(0..len).map(f)`, split into chunks of at least `min_len` items when
/// running in parallel.
pub fn map_range<T, F>(exec: Execution, len: usize, min_len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && len > min_len {
        return (0..len)
            .into_par_iter()
            .with_min_len(min_len.max(1))
            .map(f)
            .collect();
    }
    let _ = (exec, min_len);
    (0..len).map(f).collect()
}

/// Fill `out[i] = f(i)` in place.
pub fn fill<F>(exec: Execution, out: &mut [f64], min_len: usize, f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && out.len() > min_len {
        out.par_iter_mut()
            .with_min_len(min_len.max(1))
            .enumerate()
            .for_each(|(i, v)| *v = f(i));
        return;
    }
    let _ = (exec, min_len);
    for (i, v) in out.iter_mut().enumerate() {
        *v = f(i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = map_range(Execution::Sequential, 10_000, 16, f);
        let b = map_range(Execution::Parallel, 10_000, 16, f);
        assert_eq!(a, b);
        let mut c = vec![0.0; 10_000];
        fill(Execution::Parallel, &mut c, 16, f);
        assert_eq!(a, c);
    }
}

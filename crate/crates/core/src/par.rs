//! Deterministic data-parallel helpers.
//!
//! Work is cut into chunks whose boundaries depend only on the problem size,
//! never on the number of rayon workers, and partial results are combined in
//! chunk order. Reductions are therefore bit-identical for any worker count.

use rayon::prelude::*;
use std::ops::Range;

pub const CHUNK: usize = 2048;

/// Evaluates `f` on consecutive index ranges of length `chunk` (the last may
/// be shorter) and returns the results in range order.
pub fn map_chunks<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    let nchunks = n.div_ceil(chunk);
    (0..nchunks)
        .into_par_iter()
        .map(|c| f(c * chunk..((c + 1) * chunk).min(n)))
        .collect()
}

/// Σ f(i) for i in 0..n with a fixed reduction tree.
pub fn sum_by<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_chunks(n, CHUNK, |r| r.map(&f).sum::<f64>())
        .into_iter()
        .sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    sum_by(a.len(), |i| a[i] * b[i])
}

/// Fills `out[i] = f(i)` in parallel; each entry is independent.
pub fn fill<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    out.par_iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
}

/// Number of worker threads requested through `GP3_WORKERS`, if any.
pub fn workers_from_env() -> Option<usize> {
    std::env::var("GP3_WORKERS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_is_independent_of_pool_size() {
        let v: Vec<f64> = (0..100_003)
            .map(|i| ((i as f64) * 0.37).sin() * 1e-3)
            .collect();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let three = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let a = one.install(|| dot(&v, &v));
        let b = three.install(|| dot(&v, &v));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn chunks_cover_range_in_order() {
        let parts = map_chunks(10, 3, |r| r);
        assert_eq!(parts, vec![0..3, 3..6, 6..9, 9..10]);
    }
}

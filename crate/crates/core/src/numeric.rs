//! Deterministic summation helpers.
//!
//! All large reductions in this crate go through [`pairwise_sum`] or
//! [`chunked_reduce`]. Both use a fixed partition that does not depend on
//! the number of worker threads, so results are bitwise reproducible on any
//! machine with the same inputs.

use rayon::prelude::*;

/// Chunk length for parallel partitioning. Fixed so that partial sums do not
/// depend on the rayon pool size.
pub(crate) const CHUNK: usize = 8192;

/// Sums a slice by recursive pairwise reduction.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Mean of a slice via pairwise summation. Returns 0 for an empty slice.
pub fn pairwise_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Splits `0..n` into fixed-size chunks, maps every chunk to a partial
/// accumulator in parallel, and combines the partials in index order by
/// pairwise reduction.
pub(crate) fn chunked_reduce<A, M, C>(n: usize, map_chunk: M, combine: C) -> Option<A>
where
    A: Send,
    M: Fn(std::ops::Range<usize>) -> A + Sync,
    C: Fn(A, A) -> A,
{
    if n == 0 {
        return None;
    }
    let n_chunks = n.div_ceil(CHUNK);
    let mut parts: Vec<A> = (0..n_chunks)
        .into_par_iter()
        .map(|c| map_chunk(c * CHUNK..((c + 1) * CHUNK).min(n)))
        .collect();
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop()
}

/// Element-wise in-place add used when combining vector accumulators.
pub(crate) fn add_assign(a: &mut [f64], b: &[f64]) {
    debug_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-9);
    }

    #[test]
    fn chunked_reduce_is_worker_independent() {
        let xs: Vec<f64> = (0..100_000).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let sum = |r: std::ops::Range<usize>| xs[r].iter().sum::<f64>();
        let a = chunked_reduce(xs.len(), sum, |x, y| x + y).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| chunked_reduce(xs.len(), sum, |x, y| x + y).unwrap());
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

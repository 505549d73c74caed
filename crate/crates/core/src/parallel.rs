//! Thread-count independent reductions.
//!
//! Every parallel loop in the crate writes into index-addressed output, so the
//! only place where thread scheduling could leak into results is summation.
//! Sums go through [`tree_sum`], which reduces a fixed sequence of partials in
//! a fixed pairwise order.

use rayon::prelude::*;

/// Pairwise sum of `values` in a fixed order.
pub fn tree_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let (a, b) = values.split_at(n / 2);
            tree_sum(a) + tree_sum(b)
        }
    }
}

/// Sum `f(i)` for `i in 0..n`, evaluating chunks of `chunk` indices in
/// parallel. The result does not depend on the number of worker threads.
pub fn par_sum<F>(n: usize, chunk: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunk = chunk.max(1);
    let partials: Vec<f64> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let lo = c * chunk;
            let hi = (lo + chunk).min(n);
            let mut acc = 0.0;
            for i in lo..hi {
                acc += f(i);
            }
            acc
        })
        .collect();
    tree_sum(&partials)
}

/// Run `f` inside a dedicated pool with `threads` workers, or in the global
/// pool when `threads` is `None`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("failed to build thread pool")
            .install(f),
        None => f(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(tree_sum(&v), 499500.0);
    }

    #[test]
    fn par_sum_is_thread_independent() {
        let f = |i: usize| (i as f64 * 0.37).sin() * 1e-3 + 1.0 / (i as f64 + 1.0);
        let a = with_threads(Some(1), || par_sum(10_007, 64, f));
        let b = with_threads(Some(7), || par_sum(10_007, 64, f));
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

//! Data-parallel execution helpers.
//!
//! Hot loops (per-unit drift, batch embedding, batch evaluation, per-sample
//! scoring) are expressed as index-ordered maps. With the `parallel` feature
//! (default) the map runs on the rayon pool; without it the same closure runs
//! sequentially. Results are collected in index order and any floating-point
//! reduction over them happens sequentially at the call site, so both builds
//! produce bit-identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Sequential reference path, always available. Used as the baseline in the
/// bench suite and to check that the parallel path is bit-identical.
pub fn map_indexed_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_sequential_bitwise() {
        let xs: Vec<f64> = (0..10_000).map(|i| (i as f64).sin() * 3.7).collect();
        let f = |i: usize| {
            let mut acc = 0.0f64;
            for j in 0..8 {
                acc += (xs[i] + j as f64).sqrt().abs().ln_1p();
            }
            acc
        };
        let par = map_indexed(xs.len(), f);
        let seq = map_indexed_seq(xs.len(), f);
        assert_eq!(par.len(), seq.len());
        for (a, b) in par.iter().zip(seq.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

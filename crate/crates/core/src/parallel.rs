//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the indexed maps fan out over
//! rayon's thread pool; without it they run on the calling thread. Callers
//! must make per-index work independent and deterministic — every use in
//! this crate derives per-sample RNG streams from `(seed, index)`, so both
//! paths produce bit-identical results. `seq_map_indexed` is always
//! sequential and exists so benchmarks can compare the two directly.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, in parallel when the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Always-sequential counterpart of [`map_indexed`].
pub fn seq_map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let f = |i: usize| (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xDEAD_BEEF;
        assert_eq!(map_indexed(257, f), seq_map_indexed(257, f));
    }

    #[test]
    fn preserves_index_order() {
        let out = map_indexed(100, |i| i);
        assert_eq!(out, (0..100).collect::<Vec<_>>());
    }
}

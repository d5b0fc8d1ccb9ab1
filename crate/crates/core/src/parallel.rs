//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default), index-mapped loops run on the
//! rayon pool unless the process-wide sequential flag is set (`--threads 1`
//! in the CLI). Results are collected in index order and reduced in that
//! order, so outputs are bit-identical regardless of thread count; the
//! sequential mode exists as the verification path and as the fallback
//! when the feature is disabled.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force all helpers onto the single-threaded path.
pub fn set_sequential(flag: bool) {
    SEQUENTIAL.store(flag, Ordering::SeqCst);
}

pub fn is_sequential() -> bool {
    SEQUENTIAL.load(Ordering::SeqCst) || cfg!(not(feature = "parallel"))
}

/// Resolve a thread-count request: 1 selects the sequential path, larger
/// values size the rayon pool (first call wins), None keeps defaults.
pub fn configure_threads(threads: Option<usize>) {
    match threads {
        Some(1) => set_sequential(true),
        Some(_n) => {
            set_sequential(false);
            #[cfg(feature = "parallel")]
            {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(_n)
                    .build_global();
            }
        }
        None => {}
    }
}

/// Map `f` over `0..n`, returning results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !is_sequential() {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_and_parallel_agree() {
        let work = |i: usize| (i as f64).sqrt().sin();
        set_sequential(true);
        let seq: Vec<f64> = map_indexed(257, work);
        set_sequential(false);
        let par: Vec<f64> = map_indexed(257, work);
        assert_eq!(seq, par);
    }
}

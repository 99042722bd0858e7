//! Data-parallel helpers with a sequential fallback.
//!
//! Every parallel loop in the crate writes into an indexed output buffer, so
//! results never depend on the number of worker threads or on scheduling.

/// How a data-parallel loop is executed.
///
/// `Parallel` silently degrades to `Sequential` when the crate is built
/// without the `parallel` feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Execution {
    Sequential,
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

/// `(0..len).map(f).collect()`, possibly on the rayon pool.
pub fn map_indexed<T, F>(exec: Execution, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..len).into_par_iter().map(f).collect()
        }
        _ => (0..len).map(f).collect(),
    }
}

/// Fills `out[i] = f(i)` in chunks of `chunk` elements.
pub fn fill_chunks<T, F>(exec: Execution, out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            out.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(c, slice)| f(c * chunk, slice));
        }
        _ => {
            for (c, slice) in out.chunks_mut(chunk).enumerate() {
                f(c * chunk, slice);
            }
        }
    }
}

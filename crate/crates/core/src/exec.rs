//! Sequential/parallel execution of index-parallel loops.
//!
//! Every parallel loop in the crate goes through [`Execution::map`], which
//! returns results in index order. Callers reduce those results
//! sequentially, so `Parallel` is bit-identical to `Sequential`. Without the
//! `parallel` feature both variants run on the calling thread.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Sequential,
    Parallel,
}

impl Execution {
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..n).map(f).collect(),
            Execution::Parallel => par_map(n, f),
        }
    }

    pub fn try_map<T, E, F>(self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        self.map(n, f).into_iter().collect()
    }

    pub fn is_parallel(self) -> bool {
        self == Execution::Parallel
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Runs `f` with `jobs` workers. One job means [`Execution::Sequential`] on
/// the calling thread.
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce(Execution) -> R + Send) -> R {
    if jobs <= 1 {
        return f(Execution::Sequential);
    }
    run_in_pool(jobs, f)
}

#[cfg(feature = "parallel")]
fn run_in_pool<R: Send>(jobs: usize, f: impl FnOnce(Execution) -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| f(Execution::Parallel)),
        Err(_) => f(Execution::Parallel),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_in_pool<R: Send>(_jobs: usize, f: impl FnOnce(Execution) -> R + Send) -> R {
    f(Execution::Parallel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_index_order() {
        let seq = Execution::Sequential.map(1000, |i| (i as f64).sqrt());
        let par = with_jobs(4, |exec| exec.map(1000, |i| (i as f64).sqrt()));
        assert_eq!(seq, par);
    }

    #[test]
    fn try_map_reports_first_error_in_index_order() {
        let r: Result<Vec<usize>, usize> =
            Execution::Parallel.try_map(100, |i| if i % 30 == 29 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(29));
    }
}

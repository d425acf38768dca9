use nds_core::training::Executor;
use rayon::prelude::*;

/// Runs work on a dedicated rayon pool. Results keep index order, so
/// outputs do not depend on the thread count.
pub struct Parallel {
    pool: rayon::ThreadPool,
}

impl Parallel {
    /// `jobs = 0` uses every available core.
    pub fn new(jobs: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool starts");
        Parallel { pool }
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Parallel {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        if self.threads() == 1 {
            return (0..n).map(f).collect();
        }
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

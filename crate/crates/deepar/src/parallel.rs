use deepar_core::exec::Executor;
use rayon::prelude::*;

/// Executor backed by a dedicated rayon pool. Results come back in input
/// order, so outputs do not depend on the thread count.
pub struct Rayon {
    pool: rayon::ThreadPool,
}

impl Rayon {
    pub fn new(workers: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
        Ok(Self { pool })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Rayon {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        self.pool
            .install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use deepar_core::exec::Sequential;

    #[test]
    fn matches_sequential_order() {
        let items: Vec<u64> = (0..1000).collect();
        let f = |i: usize, v: &u64| (i as u64) * 31 + v * v;
        let par = Rayon::new(4).unwrap().map(&items, f);
        assert_eq!(par, Sequential.map(&items, f));
    }
}

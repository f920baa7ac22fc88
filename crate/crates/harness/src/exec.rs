use std::sync::Arc;

use dsm_core::engine::{EngineError, LocalExecutor, WorkerJob, WorkerState};
use rayon::prelude::*;
use rayon::ThreadPool;

/// Runs the workers of a round on a rayon pool. Results come back in worker
/// order, and each worker only touches its own state, so traces match the
/// sequential executor bit for bit.
#[derive(Clone)]
pub struct RayonExecutor {
    pool: Arc<ThreadPool>,
}

impl RayonExecutor {
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
        Ok(Self { pool: Arc::new(pool) })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl LocalExecutor for RayonExecutor {
    fn execute(&self, workers: &mut [WorkerState], job: &WorkerJob<'_>) -> Vec<Result<(), EngineError>> {
        self.pool.install(|| workers.par_iter_mut().map(|w| job(w)).collect())
    }
}

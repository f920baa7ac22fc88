use alloc::vec::Vec;

use super::{EngineError, WorkerState};

/// A per-worker unit of work for one round.
pub type WorkerJob<'a> = dyn Fn(&mut WorkerState) -> Result<(), EngineError> + Sync + 'a;

/// Runs one job on every worker. Workers own their state and random streams,
/// so any execution order gives the same result; implementations must return
/// one result per worker, in worker order.
pub trait LocalExecutor: Sync {
    fn execute(&self, workers: &mut [WorkerState], job: &WorkerJob<'_>) -> Vec<Result<(), EngineError>>;
}

/// Runs workers one after another in index order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl LocalExecutor for Sequential {
    fn execute(&self, workers: &mut [WorkerState], job: &WorkerJob<'_>) -> Vec<Result<(), EngineError>> {
        workers.iter_mut().map(job).collect()
    }
}

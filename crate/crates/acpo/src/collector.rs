//! Multi-threaded rollout collection.

use std::thread;

use acpo_core::estimation::{collect, merge_batches, shard_seed};
use acpo_core::scheduler::Collector;
use acpo_core::{CmdpSpec, PolicyParams, Result, TrajectoryBatch};

/// Collects `shards` seeded shards on up to `workers` threads.
///
/// Each shard has its own environment stream and shards are merged in index
/// order, so the batch depends on the shard count but not on the worker count.
#[derive(Debug, Clone, Copy)]
pub struct ThreadedCollector {
    pub workers: usize,
    pub shards: usize,
}

impl ThreadedCollector {
    pub fn new(workers: usize, shards: usize) -> Self {
        Self { workers: workers.max(1), shards: shards.max(1) }
    }
}

impl Collector for ThreadedCollector {
    fn collect(&self, spec: &CmdpSpec, params: &PolicyParams, n: usize, seed: u64) -> Result<TrajectoryBatch> {
        let shards = self.shards.min(n.max(1));
        let sizes: Vec<usize> = (0..shards).map(|j| n / shards + usize::from(j < n % shards)).collect();
        if shards == 1 {
            return collect(spec, params, n, seed);
        }
        let workers = self.workers.min(shards);
        let mut parts: Vec<Option<Result<TrajectoryBatch>>> = (0..shards).map(|_| None).collect();
        thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let sizes = &sizes;
                    scope.spawn(move || {
                        (w..shards)
                            .step_by(workers)
                            .map(|j| (j, collect(spec, params, sizes[j], shard_seed(seed, j))))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (j, part) in h.join().expect("collector thread panicked") {
                    parts[j] = Some(part);
                }
            }
        });
        let parts = parts.into_iter().map(|p| p.expect("every shard collected")).collect::<Result<Vec<_>>>()?;
        Ok(merge_batches(parts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use acpo_core::estimation::collect_sharded;
    use acpo_core::gridworld::build_gridworld;

    #[test]
    fn matches_serial_sharding_for_any_worker_count() {
        let spec = build_gridworld("hazard-goal", 4, 1).unwrap();
        let p = PolicyParams::tabular(spec.num_states, spec.num_actions);
        let serial = collect_sharded(&spec, &p, 1003, 5, 4).unwrap();
        for workers in [1, 2, 3, 8] {
            assert_eq!(ThreadedCollector::new(workers, 4).collect(&spec, &p, 1003, 5).unwrap(), serial);
        }
    }
}

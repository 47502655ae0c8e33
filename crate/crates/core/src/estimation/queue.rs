use alloc::collections::VecDeque;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::EstimateSet;
use crate::math;
use crate::scheduler::BudgetState;

/// Bounded FIFO of episode returns; the oldest entry is evicted first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnQueue {
    capacity: usize,
    values: VecDeque<f64>,
}

impl ReturnQueue {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), values: VecDeque::with_capacity(capacity) }
    }

    pub fn push(&mut self, x: f64) {
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(x);
    }

    pub fn clear(&mut self) {
        self.values.clear();
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }

    /// Mean of the queue; `None` (not ready) when empty.
    pub fn mean(&self) -> Option<f64> {
        math::mean(&self.to_vec())
    }

    pub fn std_dev(&self) -> Option<f64> {
        math::std_dev(&self.to_vec())
    }

    /// The most recent `window` entries, oldest first.
    pub fn tail(&self, window: usize) -> Vec<f64> {
        let skip = self.values.len().saturating_sub(window);
        self.values.iter().skip(skip).copied().collect()
    }
}

/// Pushes the batch's sampled reward and cost returns onto the queues.
pub fn update_queues(state: &mut BudgetState, estimate: &EstimateSet) {
    state.queue_reward.push(estimate.episode_reward_return);
    for (q, &c) in state.queue_cost.iter_mut().zip(&estimate.episode_cost_returns) {
        q.push(c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_buffer_evicts_oldest() {
        let mut q = ReturnQueue::new(3);
        for x in [1.0, 2.0, 3.0, 4.0] {
            q.push(x);
        }
        assert_eq!(q.to_vec(), alloc::vec![2.0, 3.0, 4.0]);
        assert_eq!(q.tail(2), alloc::vec![3.0, 4.0]);
    }

    #[test]
    fn empty_queue_not_ready() {
        let q = ReturnQueue::new(3);
        assert_eq!(q.mean(), None);
        assert_eq!(q.std_dev(), None);
    }

    #[test]
    fn constant_pushes() {
        let mut q = ReturnQueue::new(4);
        for _ in 0..6 {
            q.push(2.5);
        }
        assert_eq!(q.mean(), Some(2.5));
        assert_eq!(q.std_dev(), Some(0.0));
    }
}

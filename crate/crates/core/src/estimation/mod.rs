//! Rollouts, advantage estimation, value fitting, return queues and exact
//! tabular policy evaluation.

mod exact;
mod gae;
mod queue;
mod rollout;
mod values;

pub use exact::{exact_eval, exact_eval_table, ExactEval};
pub use gae::{gae, normalize, Signal};
pub use queue::{update_queues, ReturnQueue};
pub use rollout::{collect, collect_sharded, merge_batches, shard_seed, TrajectoryBatch};
pub use values::{fit_values, ValueFunction, ValueTables};

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::math;

/// Advantage and value-fitting settings. `gamma` comes from the CMDP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub gamma: f64,
    pub gae_lambda_reward: f64,
    pub gae_lambda_cost: f64,
    pub value_fit_epochs: usize,
    pub value_learning_rate: f64,
    /// Bootstrap with `V(s')` when an episode is cut by the horizon.
    pub bootstrap_truncated: bool,
}

impl EstimatorConfig {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            gae_lambda_reward: 0.95,
            gae_lambda_cost: 0.95,
            value_fit_epochs: 50,
            value_learning_rate: 3e-4,
            bootstrap_truncated: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            bail!(Invariant, "gamma {} outside (0,1)", self.gamma);
        }
        for (name, l) in [("gae_lambda_reward", self.gae_lambda_reward), ("gae_lambda_cost", self.gae_lambda_cost)] {
            if !(0.0..=1.0).contains(&l) {
                bail!(Invariant, "{name} = {l} outside [0,1]");
            }
        }
        if !(self.value_learning_rate > 0.0) {
            bail!(Invariant, "value_learning_rate must be positive");
        }
        Ok(())
    }
}

/// Per-batch advantage estimates and sampled returns.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSet {
    /// Raw reward advantages.
    pub adv_reward: Vec<f64>,
    /// Reward advantages normalized to zero mean and unit variance.
    pub adv_reward_normalized: Vec<f64>,
    /// Raw cost advantages, one array per constraint.
    pub adv_cost: Vec<Vec<f64>>,
    pub value_targets_reward: Vec<f64>,
    pub value_targets_cost: Vec<Vec<f64>>,
    /// Mean discounted reward return of the batch's complete episodes.
    pub episode_reward_return: f64,
    pub episode_cost_returns: Vec<f64>,
    pub complete_episodes: usize,
}

impl EstimateSet {
    pub fn num_costs(&self) -> usize {
        self.adv_cost.len()
    }
}

/// Discounted returns of every complete episode in the batch.
pub fn episode_returns(batch: &TrajectoryBatch, gamma: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = batch.num_costs();
    let mut rewards = Vec::new();
    let mut costs: Vec<Vec<f64>> = (0..m).map(|_| Vec::new()).collect();
    let mut acc_r = 0.0;
    let mut acc_c = alloc::vec![0.0; m];
    let mut discount = 1.0;
    for t in 0..batch.len() {
        if t == 0 || batch.episode_id[t] != batch.episode_id[t - 1] {
            acc_r = 0.0;
            acc_c.iter_mut().for_each(|c| *c = 0.0);
            discount = 1.0;
        }
        acc_r += discount * batch.reward[t];
        for i in 0..m {
            acc_c[i] += discount * batch.costs[i][t];
        }
        discount *= gamma;
        if batch.done[t] {
            rewards.push(acc_r);
            for i in 0..m {
                costs[i].push(acc_c[i]);
            }
        }
    }
    (rewards, costs)
}

/// Runs GAE for every signal and computes sampled returns.
///
/// When the batch holds no complete episode the returns fall back to the
/// fitted values at the initial distribution.
pub fn estimate(
    batch: &TrajectoryBatch,
    values: &ValueTables,
    cfg: &EstimatorConfig,
    initial_dist: &[f64],
) -> Result<EstimateSet> {
    if batch.is_empty() {
        bail!(Argument, "empty batch");
    }
    let m = batch.num_costs();
    let rv = values.reward.table(initial_dist.len());
    let (adv_reward, value_targets_reward) =
        gae(batch, &rv, cfg.gamma, cfg.gae_lambda_reward, Signal::Reward, cfg.bootstrap_truncated)?;
    let mut adv_cost = Vec::with_capacity(m);
    let mut value_targets_cost = Vec::with_capacity(m);
    for i in 0..m {
        let cv = values.costs[i].table(initial_dist.len());
        let (a, t) = gae(batch, &cv, cfg.gamma, cfg.gae_lambda_cost, Signal::Cost(i), cfg.bootstrap_truncated)?;
        adv_cost.push(a);
        value_targets_cost.push(t);
    }
    let (ep_r, ep_c) = episode_returns(batch, cfg.gamma);
    let (episode_reward_return, episode_cost_returns) = match math::mean(&ep_r) {
        Some(r) => (r, ep_c.iter().map(|c| math::mean(c).unwrap_or(0.0)).collect()),
        None => {
            let dot = |v: &[f64]| v.iter().zip(initial_dist).map(|(a, b)| a * b).sum::<f64>();
            (dot(&rv), values.costs.iter().map(|c| dot(&c.table(initial_dist.len()))).collect())
        }
    };
    let adv_reward_normalized = normalize(&adv_reward);
    if adv_reward.iter().chain(adv_cost.iter().flatten()).any(|v| !v.is_finite()) {
        bail!(Numeric, "non-finite advantage");
    }
    Ok(EstimateSet {
        adv_reward,
        adv_reward_normalized,
        adv_cost,
        value_targets_reward,
        value_targets_cost,
        episode_reward_return,
        episode_cost_returns,
        complete_episodes: ep_r.len(),
    })
}

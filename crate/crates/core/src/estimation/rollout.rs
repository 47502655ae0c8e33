use alloc::vec::Vec;

use rand::Rng;

use crate::cmdp::{CmdpSpec, EnvState};
use crate::error::{bail, Result};
use crate::policy::PolicyParams;

/// Sampled transitions in collection order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryBatch {
    pub state: Vec<usize>,
    pub action: Vec<usize>,
    pub next_state: Vec<usize>,
    pub reward: Vec<f64>,
    /// `costs[i][t]`: cost `i` of transition `t`.
    pub costs: Vec<Vec<f64>>,
    pub old_log_prob: Vec<f64>,
    pub episode_id: Vec<usize>,
    pub step_index: Vec<usize>,
    /// The episode ended at this transition.
    pub done: Vec<bool>,
    /// The episode ended in an absorbing state.
    pub terminal: Vec<bool>,
}

impl TrajectoryBatch {
    pub fn with_costs(num_costs: usize) -> Self {
        Self { costs: (0..num_costs).map(|_| Vec::new()).collect(), ..Default::default() }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.state.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.state.is_empty()
    }

    #[inline]
    pub fn num_costs(&self) -> usize {
        self.costs.len()
    }

    /// Empirical state distribution of the batch.
    pub fn state_weights(&self, num_states: usize) -> Vec<f64> {
        let mut w = alloc::vec![0.0; num_states];
        for &s in &self.state {
            w[s] += 1.0;
        }
        let n = self.len() as f64;
        w.iter_mut().for_each(|x| *x /= n);
        w
    }

    /// Sub-batch with the given transition indices (episode structure is not preserved).
    pub fn select(&self, idx: &[usize]) -> Self {
        let pick_u = |v: &Vec<usize>| idx.iter().map(|&i| v[i]).collect();
        let pick_f = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect();
        let pick_b = |v: &Vec<bool>| idx.iter().map(|&i| v[i]).collect();
        Self {
            state: pick_u(&self.state),
            action: pick_u(&self.action),
            next_state: pick_u(&self.next_state),
            reward: pick_f(&self.reward),
            costs: self.costs.iter().map(pick_f).collect(),
            old_log_prob: pick_f(&self.old_log_prob),
            episode_id: pick_u(&self.episode_id),
            step_index: pick_u(&self.step_index),
            done: pick_b(&self.done),
            terminal: pick_b(&self.terminal),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            self.action.len(),
            self.next_state.len(),
            self.reward.len(),
            self.old_log_prob.len(),
            self.episode_id.len(),
            self.step_index.len(),
            self.done.len(),
            self.terminal.len(),
        ];
        if lens.iter().any(|&l| l != n) || self.costs.iter().any(|c| c.len() != n) {
            bail!(Invariant, "batch arrays have unequal lengths");
        }
        if self.old_log_prob.iter().any(|l| !l.is_finite()) {
            bail!(Invariant, "non-finite old log-probability");
        }
        Ok(())
    }
}

/// Runs `params` for `num_transitions` steps, resetting from the initial
/// distribution whenever an episode ends. Deterministic given `seed`.
pub fn collect(spec: &CmdpSpec, params: &PolicyParams, num_transitions: usize, seed: u64) -> Result<TrajectoryBatch> {
    if num_transitions == 0 {
        bail!(Argument, "num_transitions must be at least 1");
    }
    params.check_compatible(spec.num_states, spec.num_actions)?;
    let a = spec.num_actions;
    let probs = params.prob_table();
    let log_probs = params.log_prob_table();
    let absorbing = spec.absorbing_states();
    let m = spec.num_costs();

    let mut batch = TrajectoryBatch::with_costs(m);
    for v in [&mut batch.state, &mut batch.action, &mut batch.next_state, &mut batch.episode_id, &mut batch.step_index] {
        v.reserve(num_transitions);
    }
    let mut env = EnvState::reset(spec, seed);
    let mut episode = 0;
    for _ in 0..num_transitions {
        if env.done {
            env.restart(spec);
            episode += 1;
        }
        let s = env.state_index;
        let row = &probs[s * a..(s + 1) * a];
        let u: f64 = env.rng_mut().random();
        let mut acc = 0.0;
        let mut action = a - 1;
        for (k, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                action = k;
                break;
            }
        }
        // guard against rounding leaving a zero-probability tail action
        while row[action] == 0.0 && action > 0 {
            action -= 1;
        }
        let step_index = env.steps_elapsed;
        let out = env.step(spec, action)?;
        let terminal = absorbing[out.next_state];
        batch.state.push(s);
        batch.action.push(action);
        batch.next_state.push(out.next_state);
        batch.reward.push(out.reward);
        for (i, c) in out.costs.iter().enumerate() {
            batch.costs[i].push(*c);
        }
        batch.old_log_prob.push(log_probs[s * a + action]);
        batch.episode_id.push(episode);
        batch.step_index.push(step_index);
        batch.done.push(out.done);
        batch.terminal.push(terminal && out.done);
    }
    Ok(batch)
}

/// Seed of shard `index`; shard 0 keeps the run seed.
pub fn shard_seed(seed: u64, index: usize) -> u64 {
    if index == 0 {
        seed
    } else {
        seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17)
    }
}

/// Concatenates shard batches in shard order, renumbering episodes.
pub fn merge_batches(parts: Vec<TrajectoryBatch>) -> TrajectoryBatch {
    let m = parts.first().map_or(0, |p| p.num_costs());
    let mut out = TrajectoryBatch::with_costs(m);
    let mut offset = 0;
    for part in parts {
        let next_offset = offset + part.episode_id.last().map_or(0, |e| e + 1);
        out.state.extend(part.state);
        out.action.extend(part.action);
        out.next_state.extend(part.next_state);
        out.reward.extend(part.reward);
        for (dst, src) in out.costs.iter_mut().zip(part.costs) {
            dst.extend(src);
        }
        out.old_log_prob.extend(part.old_log_prob);
        out.episode_id.extend(part.episode_id.iter().map(|e| e + offset));
        out.step_index.extend(part.step_index);
        out.done.extend(part.done);
        out.terminal.extend(part.terminal);
        offset = next_offset;
    }
    out
}

/// Splits collection into `shards` independent environment streams, merged by
/// shard index. With one shard this equals [`collect`].
pub fn collect_sharded(
    spec: &CmdpSpec,
    params: &PolicyParams,
    num_transitions: usize,
    seed: u64,
    shards: usize,
) -> Result<TrajectoryBatch> {
    let shards = shards.max(1).min(num_transitions.max(1));
    if shards == 1 {
        return collect(spec, params, num_transitions, seed);
    }
    let parts = (0..shards)
        .map(|j| {
            let n = num_transitions / shards + usize::from(j < num_transitions % shards);
            collect(spec, params, n, shard_seed(seed, j))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(merge_batches(parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::trivial_spec;
    use alloc::vec;

    #[test]
    fn degenerate_spec_batch() {
        let spec = trivial_spec(1.0, 0.9, 4);
        let p = PolicyParams::tabular(1, 1);
        let b = collect(&spec, &p, 10, 0).unwrap();
        assert_eq!(b.len(), 10);
        assert!(b.state.iter().all(|&s| s == 0));
        assert!(b.old_log_prob.iter().all(|&l| l == 0.0));
        assert_eq!(b.episode_id, vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2]);
        b.validate().unwrap();
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = crate::gridworld::build_gridworld("hazard-goal", 4, 1).unwrap();
        let p = PolicyParams::tabular(spec.num_states, spec.num_actions);
        assert_eq!(collect(&spec, &p, 500, 9).unwrap(), collect(&spec, &p, 500, 9).unwrap());
    }

    #[test]
    fn uniform_action_frequency() {
        let spec = CmdpSpec::new(1, 2, vec![1.0, 1.0], vec![0.0, 0.0], vec![vec![0.0, 0.0]], vec![1.0], 0.9, 50)
            .unwrap();
        let p = PolicyParams::tabular(1, 2);
        let b = collect(&spec, &p, 100_000, 4).unwrap();
        let f = b.action.iter().filter(|&&a| a == 0).count() as f64 / b.len() as f64;
        assert!((0.497..=0.503).contains(&f), "freq {f}");
    }

    #[test]
    fn one_shard_equals_collect_and_merge_renumbers() {
        let spec = trivial_spec(1.0, 0.9, 3);
        let p = PolicyParams::tabular(1, 1);
        assert_eq!(collect_sharded(&spec, &p, 7, 2, 1).unwrap(), collect(&spec, &p, 7, 2).unwrap());
        let b = collect_sharded(&spec, &p, 8, 2, 2).unwrap();
        assert_eq!(b.episode_id, vec![0, 0, 0, 1, 2, 2, 2, 3]);
    }

    #[test]
    fn zero_transitions_rejected() {
        let spec = trivial_spec(1.0, 0.9, 3);
        assert!(collect(&spec, &PolicyParams::tabular(1, 1), 0, 0).is_err());
    }
}

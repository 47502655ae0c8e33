//! Random small CMDPs and policies for property checks.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cmdp::CmdpSpec;
use crate::error::{bail, Result};
use crate::estimation::exact_eval;
use crate::policy::PolicyParams;

fn simplex_sample(rng: &mut ChaCha8Rng, n: usize, sparse: bool) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    if sparse && n > 1 {
        let keep = rng.random_range(0..n);
        for (k, x) in v.iter_mut().enumerate() {
            if k != keep && rng.random::<f64>() < 0.5 {
                *x = 0.0;
            }
        }
    }
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

/// A random CMDP with dense or sparse transition rows, rewards and costs in
/// `[0, 1)`, and a random initial distribution.
pub fn random_spec(rng: &mut ChaCha8Rng, num_states: usize, num_actions: usize, num_costs: usize, discount: f64) -> Result<CmdpSpec> {
    if num_states == 0 || num_actions == 0 {
        bail!(Argument, "need at least one state and one action");
    }
    let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
    for _ in 0..num_states * num_actions {
        let sparse = rng.random::<f64>() < 0.3;
        transition.extend(simplex_sample(rng, num_states, sparse));
    }
    let nsa = num_states * num_actions;
    let reward = (0..nsa).map(|_| rng.random::<f64>()).collect();
    let costs = (0..num_costs).map(|_| (0..nsa).map(|_| rng.random::<f64>()).collect()).collect();
    let initial_dist = simplex_sample(rng, num_states, false);
    CmdpSpec::new(num_states, num_actions, transition, reward, costs, initial_dist, discount, 200)
}

/// A tabular policy with logits drawn uniformly from `[-scale, scale]`.
pub fn random_policy(rng: &mut ChaCha8Rng, num_states: usize, num_actions: usize, scale: f64) -> PolicyParams {
    let logits = (0..num_states * num_actions).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
    PolicyParams::tabular_from_logits(num_states, num_actions, logits).expect("finite logits")
}

/// A random 2-state, 2-action instance whose one-step surrogate constraint
/// binds: returns `(spec, π_k, d)` where the unconstrained surrogate
/// maximizer violates the budget and a strictly feasible policy exists.
pub fn random_binding_instance(seed: u64, discount: f64) -> Result<(CmdpSpec, PolicyParams, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..1000 {
        let spec = random_spec(&mut rng, 2, 2, 1, discount)?;
        let pi = random_policy(&mut rng, 2, 2, 1.0);
        let e = exact_eval(&spec, &pi)?;
        let (ar, ac) = (e.adv_reward(), e.adv_cost(0));
        let scale = 1.0 / (1.0 - discount);
        let mut min_cost = e.j_cost[0];
        let mut greedy_cost = e.j_cost[0];
        let mut conflict = false;
        for s in 0..2 {
            let w = e.visitation[s];
            let best = if ar[2 * s] >= ar[2 * s + 1] { 0 } else { 1 };
            min_cost += scale * w * ac[2 * s].min(ac[2 * s + 1]);
            greedy_cost += scale * w * ac[2 * s + best];
            conflict |= ac[2 * s + best] > ac[2 * s + 1 - best] && w * (ar[2 * s] - ar[2 * s + 1]).abs() > 1e-3;
        }
        if !conflict || greedy_cost - min_cost < 0.05 {
            continue;
        }
        let frac = 0.3 + 0.4 * rng.random::<f64>();
        return Ok((spec, pi, min_cost + frac * (greedy_cost - min_cost)));
    }
    bail!(Numeric, "no binding instance found for seed {seed}")
}

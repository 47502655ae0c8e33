//! Finite constrained MDPs, their simulator, and the erf cost-shaping barrier.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::math;

const STOCHASTIC_TOL: f64 = 1e-12;

/// A finite CMDP with dense row-major tensors.
///
/// `transition` is indexed `(s, a, s')`, `reward` and every entry of `costs`
/// are indexed `(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmdpSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub costs: Vec<Vec<f64>>,
    pub initial_dist: Vec<f64>,
    pub discount: f64,
    pub horizon: usize,
}

impl CmdpSpec {
    /// Builds and validates a spec.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        costs: Vec<Vec<f64>>,
        initial_dist: Vec<f64>,
        discount: f64,
        horizon: usize,
    ) -> Result<Self> {
        let spec = Self {
            num_states,
            num_actions,
            transition,
            reward,
            costs,
            initial_dist,
            discount,
            horizon,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.num_states, self.num_actions);
        if s == 0 || a == 0 {
            bail!(Invariant, "num_states and num_actions must be positive");
        }
        if self.horizon == 0 {
            bail!(Invariant, "horizon must be positive");
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            bail!(Invariant, "discount {} outside (0, 1)", self.discount);
        }
        if self.transition.len() != s * a * s {
            bail!(Invariant, "transition has {} entries, expected {}", self.transition.len(), s * a * s);
        }
        if self.reward.len() != s * a {
            bail!(Invariant, "reward has {} entries, expected {}", self.reward.len(), s * a);
        }
        if self.costs.is_empty() {
            bail!(Invariant, "at least one cost function is required");
        }
        for (i, c) in self.costs.iter().enumerate() {
            if c.len() != s * a {
                bail!(Invariant, "cost {i} has {} entries, expected {}", c.len(), s * a);
            }
            if c.iter().any(|v| !v.is_finite()) {
                bail!(Invariant, "cost {i} has non-finite entries");
            }
        }
        if self.reward.iter().any(|v| !v.is_finite()) {
            bail!(Invariant, "reward has non-finite entries");
        }
        for st in 0..s {
            for ac in 0..a {
                let row = self.transition_row(st, ac);
                if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                    bail!(Invariant, "transition({st},{ac},.) has entries outside [0,1]");
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > STOCHASTIC_TOL {
                    bail!(Invariant, "transition({st},{ac},.) sums to {total}");
                }
            }
        }
        if self.initial_dist.len() != s {
            bail!(Invariant, "initial_dist has {} entries, expected {s}", self.initial_dist.len());
        }
        if self.initial_dist.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            bail!(Invariant, "initial_dist has entries outside [0,1]");
        }
        let total: f64 = self.initial_dist.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            bail!(Invariant, "initial_dist sums to {total}");
        }
        Ok(())
    }

    #[inline]
    pub fn num_costs(&self) -> usize {
        self.costs.len()
    }

    #[inline]
    pub fn sa(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.num_actions + a) * self.num_states + next]
    }

    /// A state every action maps back to itself with zero reward and zero cost.
    ///
    /// Reaching one ends the episode; the return contributed afterwards is zero
    /// so discounted returns are unaffected.
    pub fn is_absorbing(&self, s: usize) -> bool {
        (0..self.num_actions).all(|a| {
            let k = self.sa(s, a);
            self.p(s, a, s) == 1.0 && self.reward[k] == 0.0 && self.costs.iter().all(|c| c[k] == 0.0)
        })
    }

    pub fn absorbing_states(&self) -> Vec<bool> {
        (0..self.num_states).map(|s| self.is_absorbing(s)).collect()
    }
}

/// Two-sided erf barrier parameters. Either bound may be infinite to disable it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostShapingSpec {
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub smoothing: f64,
}

impl CostShapingSpec {
    pub fn new(lower_bound: f64, upper_bound: f64, smoothing: f64) -> Result<Self> {
        if !(lower_bound < upper_bound) {
            bail!(Argument, "lower bound {lower_bound} must be below upper bound {upper_bound}");
        }
        if !(smoothing > 0.0) {
            bail!(Argument, "smoothing must be positive");
        }
        Ok(Self { lower_bound, upper_bound, smoothing })
    }
}

/// Smooth penalty for leaving `[b_l, b_r]`: the sum of an upper and a mirrored
/// lower erf step. Each step is `(1 + erf(margin / sigma)) / 2`, so the result
/// lies in `[0, 2]`.
pub fn shape_cost(c: f64, shaping: &CostShapingSpec) -> f64 {
    let sigma = shaping.smoothing;
    let upper = 0.5 * (1.0 + math::erf((c - shaping.upper_bound) / sigma));
    let lower = 0.5 * (1.0 + math::erf((shaping.lower_bound - c) / sigma));
    upper + lower
}

/// Mutable per-episode simulator state.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub state_index: usize,
    pub steps_elapsed: usize,
    pub done: bool,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: usize,
    pub reward: f64,
    pub costs: Vec<f64>,
    /// The episode ended, either by reaching the horizon or an absorbing state.
    pub done: bool,
    /// The episode ended in an absorbing state (no bootstrap needed).
    pub terminal: bool,
}

fn sample_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

impl EnvState {
    /// Starts an episode at a state drawn from the initial distribution.
    pub fn reset(spec: &CmdpSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state_index = sample_index(&mut rng, &spec.initial_dist);
        Self { state_index, steps_elapsed: 0, done: false, rng }
    }

    /// Starts an episode at a fixed state.
    pub fn at(state_index: usize, seed: u64) -> Self {
        Self { state_index, steps_elapsed: 0, done: false, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Begins a new episode, keeping the random stream.
    pub fn restart(&mut self, spec: &CmdpSpec) {
        self.state_index = sample_index(&mut self.rng, &spec.initial_dist);
        self.steps_elapsed = 0;
        self.done = false;
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn step(&mut self, spec: &CmdpSpec, action: usize) -> Result<StepOutcome> {
        step(spec, self, action)
    }
}

/// Advances `env` by one transition.
pub fn step(spec: &CmdpSpec, env: &mut EnvState, action: usize) -> Result<StepOutcome> {
    if action >= spec.num_actions {
        bail!(Argument, "action {action} out of range (num_actions = {})", spec.num_actions);
    }
    if env.done {
        bail!(State, "episode already finished");
    }
    let s = env.state_index;
    let k = spec.sa(s, action);
    let next_state = sample_index(&mut env.rng, spec.transition_row(s, action));
    let reward = spec.reward[k];
    let costs = spec.costs.iter().map(|c| c[k]).collect();
    env.steps_elapsed += 1;
    env.state_index = next_state;
    let terminal = spec.is_absorbing(next_state);
    let done = terminal || env.steps_elapsed == spec.horizon;
    env.done = done;
    Ok(StepOutcome { next_state, reward, costs, done, terminal })
}

/// Single-state, single-action CMDP with the given reward.
pub fn trivial_spec(reward: f64, discount: f64, horizon: usize) -> CmdpSpec {
    CmdpSpec::new(1, 1, vec![1.0], vec![reward], vec![vec![0.0]], vec![1.0], discount, horizon)
        .expect("valid trivial spec")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> CmdpSpec {
        // s0 -a0-> s1, s1 self-loop; reward 1 on leaving s0
        CmdpSpec::new(
            2,
            1,
            vec![0.0, 1.0, 0.0, 1.0],
            vec![1.0, 0.5],
            vec![vec![0.0, 0.25]],
            vec![1.0, 0.0],
            0.9,
            10,
        )
        .unwrap()
    }

    #[test]
    fn one_state_step() {
        let spec = trivial_spec(1.0, 0.9, 5);
        let mut env = EnvState::reset(&spec, 0);
        let out = env.step(&spec, 0).unwrap();
        assert_eq!(out.next_state, 0);
        assert_eq!(out.reward, 1.0);
    }

    #[test]
    fn deterministic_chain_step() {
        let spec = chain();
        let mut env = EnvState::reset(&spec, 3);
        assert_eq!(env.state_index, 0);
        let out = env.step(&spec, 0).unwrap();
        assert_eq!(out.next_state, 1);
        assert_eq!(out.costs, vec![0.0]);
    }

    #[test]
    fn bad_action_and_done_episode_are_errors() {
        let spec = trivial_spec(1.0, 0.9, 1);
        let mut env = EnvState::reset(&spec, 0);
        assert!(matches!(env.step(&spec, 1), Err(crate::Error::Argument(_))));
        let out = env.step(&spec, 0).unwrap();
        assert!(out.done && !out.terminal);
        assert!(matches!(env.step(&spec, 0), Err(crate::Error::State(_))));
    }

    #[test]
    fn next_state_frequency_matches_tensor() {
        let spec = CmdpSpec::new(
            2,
            1,
            vec![0.3, 0.7, 0.3, 0.7],
            vec![0.0, 0.0],
            vec![vec![0.0, 0.0]],
            vec![1.0, 0.0],
            0.9,
            usize::MAX,
        )
        .unwrap();
        let mut env = EnvState::reset(&spec, 11);
        let n = 100_000;
        let mut hits = 0;
        for _ in 0..n {
            env.state_index = 0;
            if env.step(&spec, 0).unwrap().next_state == 1 {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        assert!((0.695..=0.705).contains(&freq), "freq {freq}");
    }

    #[test]
    fn seeded_steps_reproduce() {
        let spec = CmdpSpec::new(
            3,
            1,
            vec![0.2, 0.3, 0.5, 0.5, 0.25, 0.25, 0.1, 0.1, 0.8],
            vec![0.0; 3],
            vec![vec![0.0; 3]],
            vec![1.0, 0.0, 0.0],
            0.9,
            1000,
        )
        .unwrap();
        let run = |seed| {
            let mut env = EnvState::reset(&spec, seed);
            (0..200).map(|_| env.step(&spec, 0).unwrap().next_state).collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = chain();
        spec.transition[0] = 0.5;
        assert!(spec.validate().is_err());
        let mut spec = chain();
        spec.discount = 1.0;
        assert!(spec.validate().is_err());
        let mut spec = chain();
        spec.initial_dist = vec![0.5, 0.6];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn shaping_at_upper_bound_with_lower_disabled() {
        let shaping = CostShapingSpec::new(f64::NEG_INFINITY, 1.0, 0.3).unwrap();
        assert_eq!(shape_cost(1.0, &shaping), 0.5);
    }

    #[test]
    fn shaping_vanishes_mid_interval() {
        let shaping = CostShapingSpec::new(-1.0, 1.0, 0.2).unwrap();
        assert!(shape_cost(0.0, &shaping) < 1e-6);
    }

    #[test]
    fn shaping_matches_reference_erf() {
        // erf(1) and erf(-5) from a 30-digit reference evaluation.
        let erf1 = 0.842_700_792_949_714_869_341_220_635_08;
        let erf_m5 = -0.999_999_999_998_462_540_205_571_965_15;
        let expected = 0.5 * (1.0 + erf1) + 0.5 * (1.0 + erf_m5);
        let shaping = CostShapingSpec::new(-1.0, 1.0, 0.5).unwrap();
        assert!((shape_cost(1.5, &shaping) - expected).abs() < 1e-15);
    }

    #[test]
    fn shaping_rejects_bad_bounds() {
        assert!(CostShapingSpec::new(1.0, 1.0, 0.5).is_err());
        assert!(CostShapingSpec::new(0.0, 1.0, 0.0).is_err());
    }
}

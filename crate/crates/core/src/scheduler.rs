//! The ACPO outer loop: stage alternation, budget updates, convergence
//! detection and the feedback projection.

use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmdp::CmdpSpec;
use crate::error::{bail, Result};
use crate::estimation::{
    collect_sharded, estimate, update_queues, EstimateSet, EstimatorConfig, ReturnQueue, TrajectoryBatch, ValueTables,
};
use crate::math;
use crate::policy::{Adam, PolicyParams};
use crate::stage::{ascend_with, AscendReport, OptimizerConfig, StageKind, StageObjective, SurrogateScale};

/// The stage an iteration optimizes.
pub type StageFlag = StageKind;

/// Settings of the budget scheduler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    /// Maximum iterations of a max-reward stage.
    pub n1: usize,
    /// Maximum iterations of a min-cost stage.
    pub n2: usize,
    /// Exploration-only prefix: the first `n_e` iterations stay in max-reward.
    pub n_e: usize,
    /// Proportional gain of the budget feedback.
    pub k_p: f64,
    /// Gain used when enlarging an over-conservative budget; `None` uses `k_p`.
    pub enlarge_gain: Option<f64>,
    pub d0: Vec<f64>,
    pub d_des: Vec<f64>,
    /// `δ_d`: finish when every converged cost mean is this close to `d_des`.
    pub finish_tol: f64,
    pub converge_window: usize,
    pub converge_rel_tol: f64,
    /// Trust-region radius `δ`, enforced as the KL stopping threshold.
    pub trust_region: f64,
    pub barrier_t: f64,
    pub barrier_cap: f64,
    pub clip_ratio: f64,
    /// Reset the policy to uniform after a projection completes.
    pub reset_after_projection: bool,
    #[serde(default)]
    pub surrogate_scale: SurrogateScale,
}

impl StageConfig {
    pub fn new(d0: Vec<f64>, d_des: Vec<f64>) -> Self {
        let tol = d_des.iter().copied().fold(0.0, f64::max) * 0.05;
        Self {
            n1: 10,
            n2: 5,
            n_e: 10,
            k_p: 0.8,
            enlarge_gain: None,
            d0,
            d_des,
            finish_tol: tol,
            converge_window: 10,
            converge_rel_tol: 0.02,
            trust_region: 0.02,
            barrier_t: 25.0,
            barrier_cap: 25.0,
            clip_ratio: 0.2,
            reset_after_projection: false,
            surrogate_scale: SurrogateScale::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 || self.n_e == 0 {
            bail!(Invariant, "n1, n2 and n_e must be at least 1");
        }
        if !(self.k_p > 0.0) || self.enlarge_gain.is_some_and(|k| !(k > 0.0)) {
            bail!(Invariant, "feedback gains must be positive");
        }
        if self.d0.is_empty() || self.d0.len() != self.d_des.len() {
            bail!(Invariant, "d0 and d_des must be non-empty and of equal length");
        }
        for (i, (&d0, &dd)) in self.d0.iter().zip(&self.d_des).enumerate() {
            if !(dd >= 0.0) || !(d0 >= dd) {
                bail!(Invariant, "constraint {i}: need d0 >= d_des >= 0, got d0 = {d0}, d_des = {dd}");
            }
        }
        if !(self.finish_tol > 0.0) {
            bail!(Invariant, "finish_tol must be positive");
        }
        if self.converge_window == 0 || !(self.converge_rel_tol > 0.0) {
            bail!(Invariant, "convergence window and tolerance must be positive");
        }
        if !(self.trust_region > 0.0) {
            bail!(Invariant, "trust region must be positive");
        }
        if !(self.barrier_t > 0.0) || !(self.barrier_cap > 0.0) {
            bail!(Invariant, "barrier t and cap must be positive");
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            bail!(Invariant, "clip ratio {} outside (0,1)", self.clip_ratio);
        }
        Ok(())
    }

    fn enlarge_gain(&self) -> f64 {
        self.enlarge_gain.unwrap_or(self.k_p)
    }
}

/// Budgets, stage flag and return queues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetState {
    pub cost_budget: Vec<f64>,
    pub reward_budget: f64,
    pub desired: Vec<f64>,
    pub stage_flag: StageFlag,
    pub queue_reward: ReturnQueue,
    pub queue_cost: Vec<ReturnQueue>,
    pub iter_in_stage: usize,
    pub global_iter: usize,
}

impl BudgetState {
    pub fn new(cfg: &StageConfig) -> Self {
        let w = cfg.converge_window;
        Self {
            cost_budget: cfg.d0.clone(),
            reward_budget: 0.0,
            desired: cfg.d_des.clone(),
            stage_flag: StageKind::MaxReward,
            queue_reward: ReturnQueue::new(w),
            queue_cost: cfg.d0.iter().map(|_| ReturnQueue::new(w)).collect(),
            iter_in_stage: 0,
            global_iter: 0,
        }
    }

    fn cost_means(&self) -> Option<Vec<f64>> {
        self.queue_cost.iter().map(|q| q.mean()).collect()
    }

    fn switch(&mut self, flag: StageFlag) {
        self.stage_flag = flag;
        self.iter_in_stage = 0;
    }

    fn reset_queues(&mut self) {
        self.queue_reward.clear();
        self.queue_cost.iter_mut().for_each(|q| q.clear());
    }

    /// Constraints whose queued cost mean exceeds its desired value.
    pub fn violating_costs(&self) -> Vec<usize> {
        self.queue_cost
            .iter()
            .zip(&self.desired)
            .enumerate()
            .filter(|(_, (q, &d))| q.mean().is_some_and(|m| m > d))
            .map(|(i, _)| i)
            .collect()
    }
}

/// What [`update_budgets`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetEvent {
    Hold,
    Explore,
    Finish,
    Project,
    Enlarge,
    ProjectionDone,
    ToMinCost,
    ToMaxReward,
}

impl BudgetEvent {
    pub fn as_str(&self) -> &'static str {
        match self {
            BudgetEvent::Hold => "hold",
            BudgetEvent::Explore => "explore",
            BudgetEvent::Finish => "finish",
            BudgetEvent::Project => "project",
            BudgetEvent::Enlarge => "enlarge",
            BudgetEvent::ProjectionDone => "projection-done",
            BudgetEvent::ToMinCost => "to-min-cost",
            BudgetEvent::ToMaxReward => "to-max-reward",
        }
    }
}

/// True iff the queue holds at least `window` entries whose standard
/// deviation is at most `rel_tol·(1 + |mean|)` and whose older and newer
/// halves have means within the same tolerance (no sustained drift).
pub fn converged(queue: &ReturnQueue, window: usize, rel_tol: f64) -> bool {
    if window == 0 || queue.len() < window {
        return false;
    }
    let tail = queue.tail(window);
    let (Some(m), Some(sd)) = (math::mean(&tail), math::std_dev(&tail)) else {
        return false;
    };
    let tol = rel_tol * (1.0 + m.abs());
    let half = window / 2;
    let drift = match (math::mean(&tail[..half]), math::mean(&tail[window - half..])) {
        (Some(a), Some(b)) => (b - a).abs(),
        _ => 0.0,
    };
    sd <= tol && drift <= tol
}

/// Budget shift of the projection feedback law.
pub fn projection_delta(d_old: f64, d_des: f64, k_p: f64) -> f64 {
    k_p * (d_des - d_old)
}

/// One scheduler step; returns the event and whether the run should stop.
///
/// A constraint counts as violated when its mean exceeds `d_des + δ_d` and
/// as over-conservative below `d_des − δ_d`; with one constraint this is the
/// usual finish / project / enlarge split.
pub fn update_budgets(state: &mut BudgetState, cfg: &StageConfig) -> (BudgetEvent, bool) {
    if state.global_iter < cfg.n_e {
        if state.stage_flag != StageKind::MaxReward {
            state.switch(StageKind::MaxReward);
        }
        return (BudgetEvent::Explore, false);
    }
    let all_converged = converged(&state.queue_reward, cfg.converge_window, cfg.converge_rel_tol)
        && state.queue_cost.iter().all(|q| converged(q, cfg.converge_window, cfg.converge_rel_tol));
    if all_converged {
        let means = state.cost_means().expect("converged queues are non-empty");
        let finished = means.iter().zip(&state.desired).all(|(m, d)| (m - d).abs() <= cfg.finish_tol);
        if finished {
            return (BudgetEvent::Finish, true);
        }
        state.reset_queues();
        if state.stage_flag == StageKind::Projection {
            state.switch(StageKind::MaxReward);
            return (BudgetEvent::ProjectionDone, false);
        }
        let violating: Vec<usize> =
            (0..means.len()).filter(|&i| means[i] > state.desired[i] + cfg.finish_tol).collect();
        if !violating.is_empty() {
            for &i in &violating {
                let d = means[i] + projection_delta(means[i], state.desired[i], cfg.k_p);
                state.cost_budget[i] = d.max(0.0);
            }
            state.switch(StageKind::Projection);
            return (BudgetEvent::Project, false);
        }
        for i in 0..means.len() {
            if means[i] < state.desired[i] - cfg.finish_tol {
                state.cost_budget[i] += cfg.enlarge_gain() * (state.desired[i] - means[i]);
            }
        }
        state.switch(StageKind::MaxReward);
        return (BudgetEvent::Enlarge, false);
    }
    match state.stage_flag {
        StageKind::MaxReward if state.iter_in_stage >= cfg.n1 => {
            state.reward_budget = state.queue_reward.mean().unwrap_or(state.reward_budget);
            state.switch(StageKind::MinCost);
            (BudgetEvent::ToMinCost, false)
        }
        StageKind::MinCost if state.iter_in_stage >= cfg.n2 => {
            if let Some(means) = state.cost_means() {
                state.cost_budget = means.iter().map(|m| m.max(0.0)).collect();
            }
            state.switch(StageKind::MaxReward);
            (BudgetEvent::ToMaxReward, false)
        }
        _ => (BudgetEvent::Hold, false),
    }
}

/// Named random substreams derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Substream {
    Env = 1,
    Minibatch = 2,
    Init = 3,
}

/// Seed of substream `stream` at iteration `index`.
pub fn substream_seed(seed: u64, stream: Substream, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}

/// Source of trajectory batches; implemented by parallel collectors in the
/// harness.
pub trait Collector {
    fn collect(&self, spec: &CmdpSpec, params: &PolicyParams, num_transitions: usize, seed: u64)
        -> Result<TrajectoryBatch>;
}

/// Sequential collection split into a fixed number of seeded shards.
#[derive(Debug, Clone, Copy)]
pub struct SerialCollector {
    pub shards: usize,
}

impl Default for SerialCollector {
    fn default() -> Self {
        Self { shards: 1 }
    }
}

impl Collector for SerialCollector {
    fn collect(&self, spec: &CmdpSpec, params: &PolicyParams, n: usize, seed: u64) -> Result<TrajectoryBatch> {
        collect_sharded(spec, params, n, seed, self.shards)
    }
}

/// Settings shared by every training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub estimator: EstimatorConfig,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            bail!(Invariant, "iterations and batch_size must be at least 1");
        }
        self.estimator.validate()?;
        self.optimizer.validate()
    }
}

/// Everything logged about one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub stage: StageKind,
    pub event: BudgetEvent,
    /// No update was taken (min-cost with every constraint satisfied, or termination).
    pub skipped: bool,
    pub j_reward_hat: f64,
    pub j_cost_hat: Vec<f64>,
    /// Queued cost means the budget update saw (empty for baselines).
    pub cost_queue_means: Vec<f64>,
    pub cost_budget: Vec<f64>,
    pub reward_budget: f64,
    pub active_costs: Vec<usize>,
    pub kl: f64,
    pub objective: f64,
    pub barrier_arguments: Vec<f64>,
    pub domain_ok: bool,
    pub updates: usize,
    pub breach_updates: usize,
    pub grad_norm: f64,
    pub aborted: bool,
    pub complete_episodes: usize,
    /// Lagrange multipliers used by the update (PPO-Lag only).
    pub multipliers: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Finished,
    IterationCap,
}

/// Trace of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub records: Vec<IterationRecord>,
    /// `policies[k]` collected iteration `k`; the last entry is the final policy.
    pub policies: Vec<PolicyParams>,
    pub final_params: PolicyParams,
    pub termination: Termination,
    pub final_state: Option<BudgetState>,
}

impl RunResult {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

fn record_from(
    iter: usize,
    stage: StageKind,
    event: BudgetEvent,
    est: &EstimateSet,
    state: &BudgetState,
    queue_means: &[f64],
    active: Vec<usize>,
    report: Option<&AscendReport>,
) -> IterationRecord {
    IterationRecord {
        iter,
        stage,
        event,
        skipped: report.is_none(),
        j_reward_hat: est.episode_reward_return,
        j_cost_hat: est.episode_cost_returns.clone(),
        cost_queue_means: queue_means.to_vec(),
        cost_budget: state.cost_budget.clone(),
        reward_budget: state.reward_budget,
        active_costs: active,
        kl: report.map_or(0.0, |r| r.kl),
        objective: report.map_or(0.0, |r| r.end.objective),
        barrier_arguments: report.map_or_else(Vec::new, |r| r.end.barrier_arguments.clone()),
        domain_ok: report.is_none_or(|r| r.end.domain_ok),
        updates: report.map_or(0, |r| r.updates),
        breach_updates: report.map_or(0, |r| r.breach_updates),
        grad_norm: report.map_or(0.0, |r| r.grad_norm),
        aborted: report.is_some_and(|r| r.aborted),
        complete_episodes: est.complete_episodes,
        multipliers: Vec::new(),
    }
}

/// Runs ACPO from a uniform tabular policy.
pub fn run_acpo(
    spec: &CmdpSpec,
    cfg: &StageConfig,
    train: &TrainConfig,
    collector: &dyn Collector,
) -> Result<RunResult> {
    run_acpo_from(spec, cfg, train, collector, PolicyParams::tabular(spec.num_states, spec.num_actions))
}

/// Runs ACPO from the given initial policy.
pub fn run_acpo_from(
    spec: &CmdpSpec,
    cfg: &StageConfig,
    train: &TrainConfig,
    collector: &dyn Collector,
    initial: PolicyParams,
) -> Result<RunResult> {
    cfg.validate()?;
    train.validate()?;
    if cfg.d0.len() != spec.num_costs() {
        bail!(Argument, "{} budgets for {} constraints", cfg.d0.len(), spec.num_costs());
    }
    initial.check_compatible(spec.num_states, spec.num_actions)?;
    let opt = OptimizerConfig { kl_stop: cfg.trust_region, ..train.optimizer };
    let est_cfg = EstimatorConfig { gamma: spec.discount, ..train.estimator };
    let mut state = BudgetState::new(cfg);
    let mut values = ValueTables::zeros(spec.num_states, spec.num_costs());
    let mut params = initial.clone();
    let mut adam = Adam::new(params.weights.len(), opt.learning_rate);
    let mut last_stage: Option<StageKind> = None;
    let mut frozen: Option<PolicyParams> = None;
    let mut records = Vec::new();
    let mut policies = Vec::new();
    let mut termination = Termination::IterationCap;

    for k in 0..train.iterations {
        let seed = substream_seed(train.seed, Substream::Env, k as u64);
        let batch = collector.collect(spec, &params, train.batch_size, seed)?;
        let est = estimate(&batch, &values, &est_cfg, &spec.initial_dist)?;
        policies.push(params.clone());
        update_queues(&mut state, &est);
        let queue_means: Vec<f64> = state.queue_cost.iter().map(|q| q.mean().unwrap_or(0.0)).collect();
        let (event, stop) = update_budgets(&mut state, cfg);
        match event {
            BudgetEvent::Project => frozen = Some(params.clone()),
            BudgetEvent::ProjectionDone => {
                frozen = None;
                if cfg.reset_after_projection {
                    params = initial.clone();
                    adam = Adam::new(params.weights.len(), opt.learning_rate);
                }
            }
            _ => {}
        }
        if stop {
            records.push(record_from(k, state.stage_flag, event, &est, &state, &queue_means, Vec::new(), None));
            termination = Termination::Finished;
            break;
        }

        let stage = state.stage_flag;
        if last_stage != Some(stage) {
            // moment estimates from another objective would distort step sizes
            adam = Adam::new(params.weights.len(), opt.learning_rate);
            last_stage = Some(stage);
        }
        let mut obj = StageObjective {
            kind: stage,
            cost_budget: state.cost_budget.clone(),
            reward_budget: state.reward_budget,
            barrier_t: cfg.barrier_t,
            barrier_cap: cfg.barrier_cap,
            clip_ratio: cfg.clip_ratio,
            active_costs: Vec::new(),
            discount: spec.discount,
            surrogate_scale: cfg.surrogate_scale,
        };
        if stage == StageKind::MinCost {
            obj.active_costs = state.violating_costs();
        }
        let skip = stage == StageKind::MinCost && obj.active_costs.is_empty();
        let report = if skip {
            None
        } else {
            let mb_seed = substream_seed(train.seed, Substream::Minibatch, k as u64);
            Some(ascend_with(&params, &batch, &est, &obj, frozen.as_ref(), &opt, mb_seed, &mut adam)?)
        };
        values.fit(&batch, &est, &est_cfg)?;
        if let Some(r) = &report {
            params = r.params.clone();
        }
        records.push(record_from(k, stage, event, &est, &state, &queue_means, obj.active_costs.clone(), report.as_ref()));
        state.iter_in_stage += 1;
        state.global_iter += 1;
    }
    policies.push(params.clone());
    Ok(RunResult { records, policies, final_params: params, termination, final_state: Some(state) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn queue(xs: &[f64], cap: usize) -> ReturnQueue {
        let mut q = ReturnQueue::new(cap);
        xs.iter().for_each(|&x| q.push(x));
        q
    }

    fn converged_state(cost: f64, cfg: &StageConfig) -> BudgetState {
        let mut s = BudgetState::new(cfg);
        s.global_iter = cfg.n_e;
        for _ in 0..cfg.converge_window {
            s.queue_reward.push(1.0);
            s.queue_cost[0].push(cost);
        }
        s
    }

    #[test]
    fn convergence_test() {
        assert!(converged(&queue(&[3.0; 12], 12), 10, 0.02));
        assert!(!converged(&queue(&[3.0; 5], 12), 10, 0.02));
        let alt: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 0.0 } else { 100.0 }).collect();
        assert!(!converged(&queue(&alt, 10), 10, 0.05));
    }

    #[test]
    fn exploration_prefix_holds() {
        let cfg = StageConfig::new(vec![40.0], vec![25.0]);
        let mut s = BudgetState::new(&cfg);
        let before = s.clone();
        assert_eq!(update_budgets(&mut s, &cfg), (BudgetEvent::Explore, false));
        assert_eq!(s, before);
    }

    #[test]
    fn converged_violation_projects() {
        let cfg = StageConfig { k_p: 0.5, ..StageConfig::new(vec![40.0], vec![25.0]) };
        let mut s = converged_state(35.0, &cfg);
        s.cost_budget[0] = 35.0;
        assert_eq!(update_budgets(&mut s, &cfg), (BudgetEvent::Project, false));
        assert_eq!(s.cost_budget[0], 30.0);
        assert_eq!(s.stage_flag, StageKind::Projection);
        assert!(s.queue_reward.is_empty());
    }

    #[test]
    fn converged_at_target_finishes() {
        let cfg = StageConfig::new(vec![40.0], vec![25.0]);
        let mut s = converged_state(25.0, &cfg);
        assert_eq!(update_budgets(&mut s, &cfg), (BudgetEvent::Finish, true));
    }

    #[test]
    fn conservative_budget_enlarges() {
        let cfg = StageConfig { k_p: 0.5, ..StageConfig::new(vec![40.0], vec![25.0]) };
        let mut s = converged_state(5.0, &cfg);
        assert_eq!(update_budgets(&mut s, &cfg), (BudgetEvent::Enlarge, false));
        assert_eq!(s.cost_budget[0], 50.0);
        assert_eq!(s.stage_flag, StageKind::MaxReward);
    }

    #[test]
    fn stage_alternation() {
        let cfg = StageConfig::new(vec![40.0], vec![25.0]);
        let mut s = BudgetState::new(&cfg);
        s.global_iter = cfg.n_e;
        s.iter_in_stage = cfg.n1;
        s.queue_reward.push(3.0);
        s.queue_cost[0].push(30.0);
        s.queue_reward.push(5.0);
        s.queue_cost[0].push(20.0);
        assert_eq!(update_budgets(&mut s, &cfg).0, BudgetEvent::ToMinCost);
        assert_eq!(s.reward_budget, 4.0);
        assert_eq!(update_budgets(&mut s, &cfg).0, BudgetEvent::Hold);
        s.iter_in_stage = cfg.n2;
        assert_eq!(update_budgets(&mut s, &cfg).0, BudgetEvent::ToMaxReward);
        assert_eq!(s.cost_budget, vec![25.0]);
    }

    #[test]
    fn projection_delta_cases() {
        assert_eq!(projection_delta(25.0, 25.0, 0.7), 0.0);
        assert_eq!(projection_delta(35.0, 25.0, 0.5), -5.0);
    }

    #[test]
    fn substreams_differ() {
        let a = substream_seed(7, Substream::Env, 0);
        assert_ne!(a, substream_seed(7, Substream::Env, 1));
        assert_ne!(a, substream_seed(7, Substream::Minibatch, 0));
        assert_eq!(a, substream_seed(7, Substream::Env, 0));
    }
}

//! Fixed-budget and curriculum comparators: IPO, IPO-C, PPO-Lagrangian and
//! CRPO. They share collection, estimation and the ascent loop with ACPO.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cmdp::CmdpSpec;
use crate::error::{bail, Result};
use crate::estimation::{estimate, EstimateSet, EstimatorConfig, TrajectoryBatch, ValueTables};
use crate::math;
use crate::policy::{Adam, PolicyParams};
use crate::scheduler::{
    substream_seed, BudgetEvent, Collector, IterationRecord, RunResult, Substream, Termination, TrainConfig,
};
use crate::stage::{ascend_surrogate_with, ascend_with, AscendReport, OptimizerConfig, StageKind, StageObjective, Surrogate, SurrogateScale};

/// Barrier and clipping settings of the interior-point baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierConfig {
    pub barrier_t: f64,
    pub barrier_cap: f64,
    pub clip_ratio: f64,
    #[serde(default)]
    pub surrogate_scale: SurrogateScale,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        Self { barrier_t: 25.0, barrier_cap: 25.0, clip_ratio: 0.2, surrogate_scale: SurrogateScale::default() }
    }
}

/// Lagrange multipliers of PPO-Lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangeState {
    pub multipliers: Vec<f64>,
    pub lr: f64,
    pub upper_bound: f64,
}

impl LagrangeState {
    pub fn new(num_costs: usize, init: f64, lr: f64, upper_bound: f64) -> Result<Self> {
        if !(upper_bound > 0.0) || !(0.0..=upper_bound).contains(&init) || !(lr > 0.0) {
            bail!(Invariant, "need 0 <= init <= upper_bound and lr > 0");
        }
        Ok(Self { multipliers: alloc::vec![init; num_costs], lr, upper_bound })
    }

    /// `λ_i ← clamp(λ_i + lr·(Ĵ_C_i − d_i), 0, upper_bound)`.
    pub fn update(&mut self, j_cost: &[f64], d_des: &[f64]) {
        for ((l, &j), &d) in self.multipliers.iter_mut().zip(j_cost).zip(d_des) {
            *l = (*l + self.lr * (j - d)).clamp(0.0, self.upper_bound);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurriculumShape {
    Linear,
    Exponential,
}

/// Budget schedule of IPO-C, decaying from `d_init` to `d_final`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumSchedule {
    pub d_init: Vec<f64>,
    pub d_final: Vec<f64>,
    pub decay_iters: usize,
    pub shape: CurriculumShape,
}

impl CurriculumSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.decay_iters == 0 {
            bail!(Invariant, "decay_iters must be at least 1");
        }
        if self.d_init.len() != self.d_final.len()
            || self.d_init.iter().zip(&self.d_final).any(|(&a, &b)| !(a >= b && b >= 0.0))
        {
            bail!(Invariant, "curriculum needs d_init >= d_final >= 0 componentwise");
        }
        Ok(())
    }
}

const EXP_RATE: f64 = 5.0;

/// Budget of the curriculum at `iter`.
pub fn curriculum_budget(schedule: &CurriculumSchedule, iter: usize) -> Vec<f64> {
    let u = (iter as f64 / schedule.decay_iters as f64).min(1.0);
    let w = match schedule.shape {
        CurriculumShape::Linear => u,
        CurriculumShape::Exponential => {
            let floor = math::exp(-EXP_RATE);
            1.0 - (math::exp(-EXP_RATE * u) - floor) / (1.0 - floor)
        }
    };
    schedule.d_init.iter().zip(&schedule.d_final).map(|(&a, &b)| if u >= 1.0 { b } else { a + (b - a) * w }).collect()
}

fn max_reward(budget: &[f64], barrier: &BarrierConfig, discount: f64) -> StageObjective {
    StageObjective {
        kind: StageKind::MaxReward,
        cost_budget: budget.to_vec(),
        reward_budget: 0.0,
        barrier_t: barrier.barrier_t,
        barrier_cap: barrier.barrier_cap,
        clip_ratio: barrier.clip_ratio,
        active_costs: Vec::new(),
        discount,
        surrogate_scale: barrier.surrogate_scale,
    }
}

/// IPO update: the max-reward stage with a permanent budget. The optimizer
/// state `adam` carries across iterations.
#[allow(clippy::too_many_arguments)]
pub fn ipo_step(
    params: &PolicyParams,
    batch: &TrajectoryBatch,
    estimate: &EstimateSet,
    d_fixed: &[f64],
    barrier: &BarrierConfig,
    discount: f64,
    opt: &OptimizerConfig,
    seed: u64,
    adam: &mut Adam,
) -> Result<AscendReport> {
    ascend_with(params, batch, estimate, &max_reward(d_fixed, barrier, discount), None, opt, seed, adam)
}

/// PPO-Lag policy update followed by the multiplier update.
#[allow(clippy::too_many_arguments)]
pub fn ppo_lag_step(
    params: &PolicyParams,
    lag: &LagrangeState,
    batch: &TrajectoryBatch,
    estimate: &EstimateSet,
    d_des: &[f64],
    clip_ratio: f64,
    opt: &OptimizerConfig,
    seed: u64,
    adam: &mut Adam,
) -> Result<(AscendReport, LagrangeState)> {
    let total: f64 = lag.multipliers.iter().sum();
    let combined: Vec<f64> = (0..batch.len())
        .map(|n| {
            let penalty: f64 = lag.multipliers.iter().zip(&estimate.adv_cost).map(|(l, c)| l * c[n]).sum();
            (estimate.adv_reward_normalized[n] - penalty) / (1.0 + total)
        })
        .collect();
    let report = ascend_surrogate_with(params, batch, &Surrogate::clipped_only(&combined, clip_ratio), opt, seed, adam)?;
    let mut next = lag.clone();
    next.update(&estimate.episode_cost_returns, d_des);
    Ok((report, next))
}

/// Index of the constraint a CRPO step works on, if any is violated.
pub fn crpo_target(j_cost: &[f64], d_des: &[f64], tol_eta: f64) -> Option<usize> {
    j_cost.iter().zip(d_des).position(|(&j, &d)| j > d + tol_eta)
}

/// CRPO update: a cost step on the lowest violated constraint, else a reward
/// step. `adam` is reset whenever the target objective changes.
#[allow(clippy::too_many_arguments)]
pub fn crpo_step(
    params: &PolicyParams,
    batch: &TrajectoryBatch,
    estimate: &EstimateSet,
    d_des: &[f64],
    tol_eta: f64,
    clip_ratio: f64,
    opt: &OptimizerConfig,
    seed: u64,
    adam: &mut Adam,
    last_target: &mut Option<Option<usize>>,
) -> Result<(AscendReport, Option<usize>)> {
    if !(tol_eta >= 0.0) {
        bail!(Invariant, "tol_eta must be non-negative");
    }
    let target = crpo_target(&estimate.episode_cost_returns, d_des, tol_eta);
    if *last_target != Some(target) {
        *adam = Adam::new(params.weights.len(), opt.learning_rate);
        *last_target = Some(target);
    }
    let neg;
    let weights: &[f64] = match target {
        Some(i) => {
            neg = estimate.adv_cost[i].iter().map(|v| -v).collect::<Vec<f64>>();
            &neg
        }
        None => &estimate.adv_reward_normalized,
    };
    let report = ascend_surrogate_with(params, batch, &Surrogate::clipped_only(weights, clip_ratio), opt, seed, adam)?;
    Ok((report, target))
}

/// Which baseline to train, with its budget settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "algorithm")]
pub enum Baseline {
    Ipo { d_fixed: Vec<f64>, barrier: BarrierConfig },
    IpoC { schedule: CurriculumSchedule, barrier: BarrierConfig },
    PpoLag { d_des: Vec<f64>, init: f64, lr: f64, upper_bound: f64, clip_ratio: f64 },
    Crpo { d_des: Vec<f64>, tol_eta: f64, clip_ratio: f64 },
}

impl Baseline {
    pub fn num_costs(&self) -> usize {
        match self {
            Baseline::Ipo { d_fixed, .. } => d_fixed.len(),
            Baseline::IpoC { schedule, .. } => schedule.d_final.len(),
            Baseline::PpoLag { d_des, .. } | Baseline::Crpo { d_des, .. } => d_des.len(),
        }
    }
}

fn record(
    iter: usize,
    stage: StageKind,
    est: &EstimateSet,
    budget: Vec<f64>,
    report: &AscendReport,
    active: Vec<usize>,
    multipliers: Vec<f64>,
) -> IterationRecord {
    IterationRecord {
        iter,
        stage,
        event: BudgetEvent::Hold,
        skipped: false,
        j_reward_hat: est.episode_reward_return,
        j_cost_hat: est.episode_cost_returns.clone(),
        cost_queue_means: Vec::new(),
        cost_budget: budget,
        reward_budget: 0.0,
        active_costs: active,
        kl: report.kl,
        objective: report.end.objective,
        barrier_arguments: report.end.barrier_arguments.clone(),
        domain_ok: report.end.domain_ok,
        updates: report.updates,
        breach_updates: report.breach_updates,
        grad_norm: report.grad_norm,
        aborted: report.aborted,
        complete_episodes: est.complete_episodes,
        multipliers,
    }
}

/// Trains a baseline for `train.iterations` iterations from a uniform policy.
pub fn run_baseline(
    spec: &CmdpSpec,
    baseline: &Baseline,
    train: &TrainConfig,
    collector: &dyn Collector,
) -> Result<RunResult> {
    train.validate()?;
    if baseline.num_costs() != spec.num_costs() {
        bail!(Argument, "{} budgets for {} constraints", baseline.num_costs(), spec.num_costs());
    }
    let mut lag = match baseline {
        Baseline::IpoC { schedule, .. } => {
            schedule.validate()?;
            None
        }
        Baseline::PpoLag { init, lr, upper_bound, .. } => {
            Some(LagrangeState::new(spec.num_costs(), *init, *lr, *upper_bound)?)
        }
        _ => None,
    };
    let est_cfg = EstimatorConfig { gamma: spec.discount, ..train.estimator };
    let mut values = ValueTables::zeros(spec.num_states, spec.num_costs());
    let mut params = PolicyParams::tabular(spec.num_states, spec.num_actions);
    let mut adam = Adam::new(params.weights.len(), train.optimizer.learning_rate);
    let mut crpo_last = None;
    let mut records = Vec::with_capacity(train.iterations);
    let mut policies = Vec::with_capacity(train.iterations + 1);
    for k in 0..train.iterations {
        let batch = collector.collect(spec, &params, train.batch_size, substream_seed(train.seed, Substream::Env, k as u64))?;
        let est = estimate(&batch, &values, &est_cfg, &spec.initial_dist)?;
        policies.push(params.clone());
        let mb_seed = substream_seed(train.seed, Substream::Minibatch, k as u64);
        let opt = &train.optimizer;
        let rec = match baseline {
            Baseline::Ipo { d_fixed, barrier } => {
                let r = ipo_step(&params, &batch, &est, d_fixed, barrier, spec.discount, opt, mb_seed, &mut adam)?;
                let rec = record(k, StageKind::MaxReward, &est, d_fixed.clone(), &r, Vec::new(), Vec::new());
                params = r.params;
                rec
            }
            Baseline::IpoC { schedule, barrier } => {
                let d = curriculum_budget(schedule, k);
                let r = ipo_step(&params, &batch, &est, &d, barrier, spec.discount, opt, mb_seed, &mut adam)?;
                let rec = record(k, StageKind::MaxReward, &est, d, &r, Vec::new(), Vec::new());
                params = r.params;
                rec
            }
            Baseline::PpoLag { d_des, clip_ratio, .. } => {
                let state = lag.as_ref().expect("initialized above");
                let (r, next) = ppo_lag_step(&params, state, &batch, &est, d_des, *clip_ratio, opt, mb_seed, &mut adam)?;
                let rec = record(k, StageKind::MaxReward, &est, d_des.clone(), &r, Vec::new(), state.multipliers.clone());
                lag = Some(next);
                params = r.params;
                rec
            }
            Baseline::Crpo { d_des, tol_eta, clip_ratio } => {
                let (r, target) = crpo_step(&params, &batch, &est, d_des, *tol_eta, *clip_ratio, opt, mb_seed, &mut adam, &mut crpo_last)?;
                let stage = if target.is_some() { StageKind::MinCost } else { StageKind::MaxReward };
                let rec = record(k, stage, &est, d_des.clone(), &r, target.into_iter().collect(), Vec::new());
                params = r.params;
                rec
            }
        };
        values.fit(&batch, &est, &est_cfg)?;
        records.push(rec);
    }
    policies.push(params.clone());
    Ok(RunResult { records, policies, final_params: params, termination: Termination::IterationCap, final_state: None })
}

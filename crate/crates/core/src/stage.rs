//! Interior-point stage objectives and the inner gradient-ascent loop.
//!
//! Every objective is built from three kinds of terms over a batch of
//! transitions sampled by `π_k`, with `ratio = π_θ(a|s) / π_k(a|s)`:
//!
//! * clipped surrogates `mean(min(ratio·w, clip(ratio)·w))`,
//! * log-barriers `φ(base + scale·mean(ratio·w))`,
//! * a KL anchor `−mean_s KL(π_θ(·|s) || π_old(·|s))`.
//!
//! Gradients are analytic: every term reduces to per-state logit gradients,
//! which the policy back-propagates to its weights.

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::estimation::{EstimateSet, TrajectoryBatch};
use crate::math;
use crate::policy::{kl_divergence, Adam, PolicyParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    MaxReward,
    MinCost,
    Projection,
}

impl StageKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StageKind::MaxReward => "max-reward",
            StageKind::MinCost => "min-cost",
            StageKind::Projection => "projection",
        }
    }
}

/// How a batch of advantages is turned into a first-order change of a return
/// inside the barrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateScale {
    /// `(1/N_ep)·Σ_n γ^{t_n}·ratio_n·A_n`: the per-episode discounted sum, an
    /// unbiased estimate of `(1/(1−γ))·E_{d^π}[ratio·A]` for episodic batches.
    #[default]
    EpisodeSum,
    /// `(1/(1−γ))·mean_n ratio_n·A_n`, exact when transitions are drawn from
    /// the normalized discounted visitation.
    HorizonMean,
}

/// One stage's optimization problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageObjective {
    pub kind: StageKind,
    /// `d^k`, one entry per constraint.
    pub cost_budget: Vec<f64>,
    /// `g^k`.
    pub reward_budget: f64,
    pub barrier_t: f64,
    pub barrier_cap: f64,
    pub clip_ratio: f64,
    /// Constraints entering the min-cost objective.
    pub active_costs: Vec<usize>,
    /// Discount of the CMDP; scales advantages into return units.
    pub discount: f64,
    #[serde(default)]
    pub surrogate_scale: SurrogateScale,
}

impl StageObjective {
    pub fn new(kind: StageKind, cost_budget: Vec<f64>, discount: f64) -> Self {
        Self {
            kind,
            cost_budget,
            reward_budget: 0.0,
            barrier_t: 25.0,
            barrier_cap: 25.0,
            clip_ratio: 0.2,
            active_costs: Vec::new(),
            discount,
            surrogate_scale: SurrogateScale::default(),
        }
    }

    pub fn validate(&self, num_costs: usize) -> Result<()> {
        if !(self.barrier_t > 0.0) {
            bail!(Invariant, "barrier t must be positive, got {}", self.barrier_t);
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            bail!(Invariant, "clip ratio {} outside (0,1)", self.clip_ratio);
        }
        if !(self.barrier_cap > 0.0) {
            bail!(Invariant, "barrier cap must be positive");
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            bail!(Invariant, "discount {} outside (0,1)", self.discount);
        }
        if self.cost_budget.len() != num_costs {
            bail!(Argument, "{} budgets for {num_costs} constraints", self.cost_budget.len());
        }
        if let Some(&i) = self.active_costs.iter().find(|&&i| i >= num_costs) {
            bail!(Invariant, "active cost {i} out of range");
        }
        Ok(())
    }

}

/// Value of a stage objective together with its barrier arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateValue {
    pub objective: f64,
    /// The largest barrier argument (the binding one).
    pub barrier_argument: f64,
    pub barrier_arguments: Vec<f64>,
    /// False iff some barrier argument is non-negative.
    pub domain_ok: bool,
}

/// `φ(x) = log(−x)/t`, clamped to `[−cap, cap]`; saturated at `−cap` for `x ≥ 0`.
pub fn barrier_phi(x: f64, t: f64, cap: f64) -> f64 {
    if x < 0.0 {
        (math::ln(-x) / t).clamp(-cap, cap)
    } else {
        -cap
    }
}

/// Derivative of [`barrier_phi`] in `x`; zero wherever it is clamped.
pub fn barrier_phi_slope(x: f64, t: f64, cap: f64) -> f64 {
    if x >= 0.0 {
        return 0.0;
    }
    let v = math::ln(-x) / t;
    if v <= -cap || v >= cap {
        0.0
    } else {
        1.0 / (t * x)
    }
}

/// A log-barrier term `φ(base + scale·mean(ratio·weights))`.
#[derive(Debug, Clone)]
pub struct BarrierTerm<'a> {
    pub base: f64,
    pub scale: f64,
    pub weights: Cow<'a, [f64]>,
}

/// Barrier weights and scale for `adv` such that `scale·mean(ratio·weights)`
/// is the first-order return change under `surrogate`.
pub fn surrogate_weights<'a>(
    batch: &TrajectoryBatch,
    adv: &'a [f64],
    discount: f64,
    surrogate: SurrogateScale,
) -> (Cow<'a, [f64]>, f64) {
    match surrogate {
        SurrogateScale::HorizonMean => (Cow::Borrowed(adv), 1.0 / (1.0 - discount)),
        SurrogateScale::EpisodeSum => {
            let episodes = batch.step_index.iter().filter(|&&t| t == 0).count().max(1);
            let w = adv.iter().zip(&batch.step_index).map(|(a, &t)| a * math::powi(discount, t as i32)).collect();
            (Cow::Owned(w), batch.len() as f64 / episodes as f64)
        }
    }
}

/// A general surrogate objective over a batch. Stage objectives and the
/// baselines are all instances.
#[derive(Debug, Clone)]
pub struct Surrogate<'a> {
    /// `coef · mean(min(ratio·w, clip(ratio)·w))` terms.
    pub clipped: Vec<(f64, &'a [f64])>,
    pub barriers: Vec<BarrierTerm<'a>>,
    /// `coef · mean_n KL(π_θ(·|s_n) || anchor(·|s_n))`, anchor given as a
    /// `|S| x |A|` log-probability table.
    pub kl_anchor: Option<(f64, Vec<f64>)>,
    /// May be infinite (no clipping).
    pub clip_ratio: f64,
    pub barrier_t: f64,
    pub barrier_cap: f64,
}

/// Objective value plus gradient with respect to the policy weights.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: SurrogateValue,
    pub grad: Vec<f64>,
}

impl<'a> Surrogate<'a> {
    fn empty(clip_ratio: f64, barrier_t: f64, barrier_cap: f64) -> Self {
        Self { clipped: Vec::new(), barriers: Vec::new(), kl_anchor: None, clip_ratio, barrier_t, barrier_cap }
    }

    /// Plain clipped surrogate of one advantage array.
    pub fn clipped_only(weights: &'a [f64], clip_ratio: f64) -> Self {
        let mut s = Self::empty(clip_ratio, 1.0, 1.0);
        s.clipped.push((1.0, weights));
        s
    }

    /// Value and exact gradient over the transitions `idx`.
    ///
    /// With `recover` set, a breached barrier (argument `≥ 0`, where `φ` is
    /// flat) contributes `−cap·∇x` to the gradient so ascent can re-enter the
    /// barrier's domain. The reported value is unaffected.
    pub fn evaluate(
        &self,
        params: &PolicyParams,
        batch: &TrajectoryBatch,
        idx: &[usize],
        recover: bool,
    ) -> Result<Evaluation> {
        if idx.is_empty() {
            bail!(Argument, "empty minibatch");
        }
        let a = params.num_actions();
        let ns = params.num_states;
        let logp = params.log_prob_table();
        if logp.iter().any(|v| !v.is_finite()) {
            bail!(Numeric, "non-finite log-probabilities");
        }
        let probs: Vec<f64> = logp.iter().map(|&l| math::exp(l)).collect();
        let inv_n = 1.0 / idx.len() as f64;
        let ratio: Vec<f64> = idx
            .iter()
            .map(|&n| math::exp(logp[batch.state[n] * a + batch.action[n]] - batch.old_log_prob[n]))
            .collect();

        // h[s,a] accumulates dObj/dratio · ratio for transitions at (s,a); the
        // logit gradient of ratio is ratio·(e_a − π(·|s)).
        let mut h = vec![0.0; ns * a];
        let mut objective = 0.0;
        let (lo, hi) = (1.0 - self.clip_ratio, 1.0 + self.clip_ratio);
        for &(coef, w) in &self.clipped {
            let mut total = 0.0;
            for (j, &n) in idx.iter().enumerate() {
                let r = ratio[j];
                let wn = w[n];
                let unclipped = r * wn;
                let clipped = r.clamp(lo, hi) * wn;
                if unclipped <= clipped {
                    total += unclipped;
                    h[batch.state[n] * a + batch.action[n]] += coef * inv_n * wn * r;
                } else {
                    total += clipped;
                }
            }
            objective += coef * total * inv_n;
        }

        let mut args = Vec::with_capacity(self.barriers.len());
        for b in &self.barriers {
            let mean: f64 = idx.iter().zip(&ratio).map(|(&n, r)| r * b.weights[n]).sum::<f64>() * inv_n;
            let x = b.base + b.scale * mean;
            args.push(x);
            objective += barrier_phi(x, self.barrier_t, self.barrier_cap);
            let mut slope = barrier_phi_slope(x, self.barrier_t, self.barrier_cap);
            if recover && x >= 0.0 {
                slope = -self.barrier_cap;
            }
            if slope != 0.0 {
                let c = slope * b.scale * inv_n;
                for (j, &n) in idx.iter().enumerate() {
                    h[batch.state[n] * a + batch.action[n]] += c * b.weights[n] * ratio[j];
                }
            }
        }

        let mut grad_logits = vec![0.0; ns * a];
        for s in 0..ns {
            let row = &h[s * a..(s + 1) * a];
            let hs: f64 = row.iter().sum();
            if hs == 0.0 && row.iter().all(|&v| v == 0.0) {
                continue;
            }
            for k in 0..a {
                grad_logits[s * a + k] = row[k] - hs * probs[s * a + k];
            }
        }

        if let Some((coef, anchor)) = &self.kl_anchor {
            let mut counts = vec![0usize; ns];
            for &n in idx {
                counts[batch.state[n]] += 1;
            }
            for s in 0..ns {
                if counts[s] == 0 {
                    continue;
                }
                let w = counts[s] as f64 * inv_n;
                let mut kl = 0.0;
                for k in 0..a {
                    kl += probs[s * a + k] * (logp[s * a + k] - anchor[s * a + k]);
                }
                objective += coef * w * kl;
                for k in 0..a {
                    let p = probs[s * a + k];
                    grad_logits[s * a + k] += coef * w * p * (logp[s * a + k] - anchor[s * a + k] - kl);
                }
            }
        }

        let barrier_argument = args.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let domain_ok = args.iter().all(|&x| x < 0.0);
        let grad = params.backprop_logits(&grad_logits);
        Ok(Evaluation { value: SurrogateValue { objective, barrier_argument, barrier_arguments: args, domain_ok }, grad })
    }
}

/// `Ĵ_C_i + Δ̂_i − budget` over the whole batch, where `Δ̂_i` is the
/// first-order cost change under `surrogate` (with
/// [`SurrogateScale::HorizonMean`], `(1/(1−γ))·mean(ratio·A_C_i)`).
pub fn surrogate_cost_constraint(
    batch: &TrajectoryBatch,
    estimate: &EstimateSet,
    params: &PolicyParams,
    budget: f64,
    constraint: usize,
    discount: f64,
    surrogate: SurrogateScale,
) -> Result<f64> {
    if constraint >= estimate.num_costs() {
        bail!(Argument, "constraint {constraint} out of range");
    }
    let a = params.num_actions();
    let logp = params.log_prob_table();
    let (w, scale) = surrogate_weights(batch, &estimate.adv_cost[constraint], discount, surrogate);
    let mut total = 0.0;
    for n in 0..batch.len() {
        let r = math::exp(logp[batch.state[n] * a + batch.action[n]] - batch.old_log_prob[n]);
        total += r * w[n];
    }
    Ok(estimate.episode_cost_returns[constraint] + scale * total / batch.len() as f64 - budget)
}

fn cost_barriers<'a>(
    obj: &StageObjective,
    batch: &TrajectoryBatch,
    estimate: &'a EstimateSet,
    budgets: &[f64],
) -> Vec<BarrierTerm<'a>> {
    budgets
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let (weights, scale) = surrogate_weights(batch, &estimate.adv_cost[i], obj.discount, obj.surrogate_scale);
            BarrierTerm { base: estimate.episode_cost_returns[i] - d, scale, weights }
        })
        .collect()
}

/// Builds the surrogate of a stage. Projection needs the frozen policy.
pub fn stage_surrogate<'a>(
    obj: &StageObjective,
    batch: &TrajectoryBatch,
    estimate: &'a EstimateSet,
    neg_adv_cost: &'a [Vec<f64>],
    neg_adv_reward: &'a [f64],
    frozen: Option<&PolicyParams>,
) -> Result<Surrogate<'a>> {
    obj.validate(estimate.num_costs())?;
    let mut s = Surrogate::empty(obj.clip_ratio, obj.barrier_t, obj.barrier_cap);
    match obj.kind {
        StageKind::MaxReward => {
            s.clipped.push((1.0, &estimate.adv_reward_normalized));
            s.barriers = cost_barriers(obj, batch, estimate, &obj.cost_budget);
        }
        StageKind::MinCost => {
            if obj.active_costs.is_empty() {
                bail!(State, "min-cost stage with no active constraint must be skipped");
            }
            for &i in &obj.active_costs {
                s.clipped.push((1.0, &neg_adv_cost[i]));
            }
            let (weights, scale) = surrogate_weights(batch, neg_adv_reward, obj.discount, obj.surrogate_scale);
            s.barriers.push(BarrierTerm { base: obj.reward_budget - estimate.episode_reward_return, scale, weights });
        }
        StageKind::Projection => {
            let Some(frozen) = frozen else {
                bail!(State, "projection stage without a frozen policy");
            };
            s.kl_anchor = Some((-1.0, frozen.log_prob_table()));
            s.barriers = cost_barriers(obj, batch, estimate, &obj.cost_budget);
        }
    }
    Ok(s)
}

/// Negated cost and reward advantages, the weights of min-cost terms.
pub fn negated_advantages(estimate: &EstimateSet) -> (Vec<Vec<f64>>, Vec<f64>) {
    (
        estimate.adv_cost.iter().map(|c| c.iter().map(|v| -v).collect()).collect(),
        estimate.adv_reward.iter().map(|v| -v).collect(),
    )
}

/// Value and gradient of a stage objective over the full batch.
pub fn stage_evaluate(
    batch: &TrajectoryBatch,
    estimate: &EstimateSet,
    params: &PolicyParams,
    obj: &StageObjective,
    frozen: Option<&PolicyParams>,
) -> Result<Evaluation> {
    let (nc, nr) = negated_advantages(estimate);
    let s = stage_surrogate(obj, batch, estimate, &nc, &nr, frozen)?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    s.evaluate(params, batch, &idx, false)
}

fn expect_kind(obj: &StageObjective, kind: StageKind) -> Result<()> {
    if obj.kind != kind {
        bail!(Argument, "expected a {} objective, got {}", kind.as_str(), obj.kind.as_str());
    }
    Ok(())
}

pub fn max_reward_objective(
    batch: &TrajectoryBatch,
    estimate: &EstimateSet,
    params: &PolicyParams,
    obj: &StageObjective,
) -> Result<SurrogateValue> {
    expect_kind(obj, StageKind::MaxReward)?;
    Ok(stage_evaluate(batch, estimate, params, obj, None)?.value)
}

pub fn min_cost_objective(
    batch: &TrajectoryBatch,
    estimate: &EstimateSet,
    params: &PolicyParams,
    obj: &StageObjective,
) -> Result<SurrogateValue> {
    expect_kind(obj, StageKind::MinCost)?;
    Ok(stage_evaluate(batch, estimate, params, obj, None)?.value)
}

pub fn projection_objective(
    batch: &TrajectoryBatch,
    estimate: &EstimateSet,
    params: &PolicyParams,
    frozen: &PolicyParams,
    obj: &StageObjective,
) -> Result<SurrogateValue> {
    expect_kind(obj, StageKind::Projection)?;
    Ok(stage_evaluate(batch, estimate, params, obj, Some(frozen))?.value)
}

/// Inner-loop optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub epochs: usize,
    /// Transitions per minibatch; 0 means the full batch.
    pub minibatch_size: usize,
    pub learning_rate: f64,
    /// Stop updating once the batch KL to the sampling policy reaches this.
    pub kl_stop: f64,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            bail!(Invariant, "epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bail!(Invariant, "learning rate must be positive");
        }
        if !(self.kl_stop >= 0.0) {
            bail!(Invariant, "kl_stop must be non-negative");
        }
        Ok(())
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { epochs: 40, minibatch_size: 0, learning_rate: 0.01, kl_stop: 0.02 }
    }
}

/// Outcome of one [`ascend`] call.
#[derive(Debug, Clone)]
pub struct AscendReport {
    pub params: PolicyParams,
    pub updates: usize,
    /// Batch KL(π_new || π_sampling) under the batch state distribution.
    pub kl: f64,
    pub stopped_early: bool,
    /// A non-finite gradient was met; `params` is the input.
    pub aborted: bool,
    pub start: SurrogateValue,
    pub end: SurrogateValue,
    /// Norm of the first gradient.
    pub grad_norm: f64,
    /// Updates taken while some barrier argument was outside the domain.
    pub breach_updates: usize,
}

/// Adam ascent on `surrogate` for `epochs` passes of minibatches, from a
/// fresh optimizer state.
///
/// Before each update the batch KL to the sampling policy (the input params)
/// is measured; once it reaches `kl_stop`, all remaining updates are skipped.
pub fn ascend_surrogate(
    params: &PolicyParams,
    batch: &TrajectoryBatch,
    surrogate: &Surrogate<'_>,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<AscendReport> {
    let mut adam = Adam::new(params.weights.len(), opt.learning_rate);
    ascend_surrogate_with(params, batch, surrogate, opt, seed, &mut adam)
}

/// [`ascend_surrogate`] continuing from a caller-held optimizer state, which
/// is left untouched when the ascent aborts.
pub fn ascend_surrogate_with(
    params: &PolicyParams,
    batch: &TrajectoryBatch,
    surrogate: &Surrogate<'_>,
    opt: &OptimizerConfig,
    seed: u64,
    adam: &mut Adam,
) -> Result<AscendReport> {
    opt.validate()?;
    if adam.len() != params.weights.len() {
        bail!(Argument, "optimizer state has {} entries for {} weights", adam.len(), params.weights.len());
    }
    if batch.is_empty() {
        bail!(Argument, "empty batch");
    }
    let n = batch.len();
    let all: Vec<usize> = (0..n).collect();
    let weights = batch.state_weights(params.num_states);
    let sampling = params.clone();
    let start = surrogate.evaluate(params, batch, &all, false)?;
    let grad_norm = math::sqrt(start.grad.iter().map(|g| g * g).sum());

    let mb = if opt.minibatch_size == 0 || opt.minibatch_size >= n { n } else { opt.minibatch_size };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = all.clone();
    let mut current = params.clone();
    let saved = adam.clone();
    adam.lr = opt.learning_rate;
    let mut updates = 0;
    let mut breach_updates = 0;
    let mut stopped_early = false;
    'outer: for _ in 0..opt.epochs {
        if mb < n {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(mb) {
            if kl_divergence(&current, &sampling, &weights)? >= opt.kl_stop {
                stopped_early = true;
                break 'outer;
            }
            let eval = if mb == n { surrogate.evaluate(&current, batch, &all, true) } else {
                surrogate.evaluate(&current, batch, chunk, true)
            };
            let eval = match eval {
                Ok(e) if e.grad.iter().all(|g| g.is_finite()) => e,
                Ok(_) | Err(crate::Error::Numeric(_)) => {
                    *adam = saved;
                    return Ok(AscendReport {
                        params: params.clone(),
                        updates: 0,
                        kl: 0.0,
                        stopped_early: false,
                        aborted: true,
                        end: start.value.clone(),
                        start: start.value,
                        grad_norm,
                        breach_updates: 0,
                    });
                }
                Err(e) => return Err(e),
            };
            if !eval.value.domain_ok {
                breach_updates += 1;
            }
            adam.ascend(&mut current.weights, &eval.grad);
            updates += 1;
        }
    }
    let kl = kl_divergence(&current, &sampling, &weights)?;
    let end = surrogate.evaluate(&current, batch, &all, false)?.value;
    Ok(AscendReport { params: current, updates, kl, stopped_early, aborted: false, start: start.value, end, grad_norm, breach_updates })
}

/// One stage update: builds the stage objective and ascends it.
pub fn ascend(
    params: &PolicyParams,
    batch: &TrajectoryBatch,
    estimate: &EstimateSet,
    obj: &StageObjective,
    frozen: Option<&PolicyParams>,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<AscendReport> {
    let mut adam = Adam::new(params.weights.len(), opt.learning_rate);
    ascend_with(params, batch, estimate, obj, frozen, opt, seed, &mut adam)
}

/// [`ascend`] continuing from a caller-held optimizer state.
#[allow(clippy::too_many_arguments)]
pub fn ascend_with(
    params: &PolicyParams,
    batch: &TrajectoryBatch,
    estimate: &EstimateSet,
    obj: &StageObjective,
    frozen: Option<&PolicyParams>,
    opt: &OptimizerConfig,
    seed: u64,
    adam: &mut Adam,
) -> Result<AscendReport> {
    let (nc, nr) = negated_advantages(estimate);
    let s = stage_surrogate(obj, batch, estimate, &nc, &nr, frozen)?;
    ascend_surrogate_with(params, batch, &s, opt, seed, adam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn one_state_batch(actions: &[usize], adv: &[f64]) -> (TrajectoryBatch, EstimateSet) {
        let mut b = TrajectoryBatch::with_costs(1);
        for (t, &act) in actions.iter().enumerate() {
            b.state.push(0);
            b.next_state.push(0);
            b.action.push(act);
            b.reward.push(0.0);
            b.costs[0].push(0.0);
            b.old_log_prob.push(math::ln(0.5));
            b.episode_id.push(t);
            b.step_index.push(0);
            b.done.push(true);
            b.terminal.push(false);
        }
        let e = EstimateSet {
            adv_reward: adv.to_vec(),
            adv_reward_normalized: adv.to_vec(),
            adv_cost: vec![vec![0.0; adv.len()]],
            value_targets_reward: vec![0.0; adv.len()],
            value_targets_cost: vec![vec![0.0; adv.len()]],
            episode_reward_return: 0.0,
            episode_cost_returns: vec![0.0],
            complete_episodes: adv.len(),
        };
        (b, e)
    }

    #[test]
    fn barrier_values() {
        assert_eq!(barrier_phi(-1.0, 3.0, 25.0), 0.0);
        assert!((barrier_phi(-core::f64::consts::E, 4.0, 25.0) - 0.25).abs() < 1e-15);
        assert!((barrier_phi(-1e-12, 25.0, 25.0) - math::ln(1e-12) / 25.0).abs() < 1e-15);
        assert_eq!(barrier_phi(0.0, 25.0, 25.0), -25.0);
        assert_eq!(barrier_phi(3.0, 25.0, 25.0), -25.0);
        assert_eq!(barrier_phi(-1e-300, 1.0, 25.0), -25.0);
    }

    #[test]
    fn cost_constraint_reduces_to_budget_gap() {
        let (b, e) = one_state_batch(&[0, 1], &[0.0, 0.0]);
        let p = PolicyParams::tabular(1, 2);
        let x = surrogate_cost_constraint(&b, &e, &p, 25.0, 0, 0.99, SurrogateScale::HorizonMean).unwrap();
        assert!((x + 25.0).abs() < 1e-12);
    }

    #[test]
    fn zero_advantage_slack_objective_is_zero() {
        let (b, mut e) = one_state_batch(&[0, 1], &[0.0, 0.0]);
        e.episode_cost_returns = vec![1.0];
        let obj = StageObjective::new(StageKind::MaxReward, vec![2.0], 0.99);
        let v = max_reward_objective(&b, &e, &PolicyParams::tabular(1, 2), &obj).unwrap();
        assert!(v.objective.abs() < 1e-12);
        assert!(v.domain_ok);
    }

    #[test]
    fn infeasible_point_saturates() {
        let (b, mut e) = one_state_batch(&[0, 1], &[1.0, -1.0]);
        e.episode_cost_returns = vec![3.0];
        let obj = StageObjective::new(StageKind::MaxReward, vec![2.0], 0.99);
        let v = max_reward_objective(&b, &e, &PolicyParams::tabular(1, 2), &obj).unwrap();
        assert!(!v.domain_ok);
        assert!((v.objective - (0.0 - 25.0)).abs() < 1e-12);
    }

    #[test]
    fn min_cost_requires_active_set() {
        let (b, e) = one_state_batch(&[0], &[0.0]);
        let obj = StageObjective::new(StageKind::MinCost, vec![1.0], 0.99);
        assert!(min_cost_objective(&b, &e, &PolicyParams::tabular(1, 2), &obj).is_err());
    }

    #[test]
    fn step_moves_toward_positive_advantage() {
        let (b, e) = one_state_batch(&[0, 1], &[1.0, -1.0]);
        let obj = StageObjective::new(StageKind::MaxReward, vec![10.0], 0.99);
        let p = PolicyParams::tabular(1, 2);
        let opt = OptimizerConfig { epochs: 1, minibatch_size: 0, learning_rate: 0.1, kl_stop: 1.0 };
        let r = ascend(&p, &b, &e, &obj, None, &opt, 0).unwrap();
        assert!(r.params.action_dist(0).unwrap().probs[0] > 0.5);
    }

    #[test]
    fn kl_stop_zero_keeps_params() {
        let (b, e) = one_state_batch(&[0, 1], &[1.0, -1.0]);
        let obj = StageObjective::new(StageKind::MaxReward, vec![10.0], 0.99);
        let p = PolicyParams::tabular(1, 2);
        let opt = OptimizerConfig { kl_stop: 0.0, ..OptimizerConfig::default() };
        let r = ascend(&p, &b, &e, &obj, None, &opt, 0).unwrap();
        assert_eq!(r.params, p);
        assert!(r.stopped_early);
    }

    #[test]
    fn zero_gradient_fixed_point() {
        let (b, e) = one_state_batch(&[0, 1], &[0.0, 0.0]);
        let obj = StageObjective::new(StageKind::MaxReward, vec![10.0], 0.99);
        let p = PolicyParams::tabular(1, 2);
        let r = ascend(&p, &b, &e, &obj, None, &OptimizerConfig::default(), 0).unwrap();
        assert_eq!(r.params, p);
    }

    #[test]
    fn projection_at_frozen_with_slack_is_zero() {
        let (b, mut e) = one_state_batch(&[0, 1], &[0.3, -0.2]);
        e.episode_cost_returns = vec![1.0];
        let obj = StageObjective::new(StageKind::Projection, vec![2.0], 0.99);
        let p = PolicyParams::tabular(1, 2);
        let v = projection_objective(&b, &e, &p, &p, &obj).unwrap();
        assert!(v.objective.abs() < 1e-12);
    }
}

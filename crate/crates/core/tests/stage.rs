//! Stage objectives: gradients against finite differences, the barrier
//! argument against a direct re-computation, and the projection penalty
//! against the policy KL.

use acpo_core::estimation::{collect, estimate, ValueTables};
use acpo_core::oracle::random::{random_policy, random_spec};
use acpo_core::policy::kl_per_state;
use acpo_core::stage::{barrier_phi, barrier_phi_slope, stage_evaluate, surrogate_cost_constraint};
use acpo_core::{CmdpSpec, EstimateSet, EstimatorConfig, PolicyParams, StageKind, StageObjective, SurrogateScale, TrajectoryBatch};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    spec: CmdpSpec,
    sampler: PolicyParams,
    params: PolicyParams,
    batch: TrajectoryBatch,
    est: EstimateSet,
}

fn fixture(seed: u64, m: usize, transitions: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ns, na) = (rng.random_range(2..=5), rng.random_range(2..=4));
    let spec = random_spec(&mut rng, ns, na, m, 0.95).unwrap();
    let sampler = random_policy(&mut rng, ns, na, 1.0);
    let batch = collect(&spec, &sampler, transitions, seed).unwrap();
    let est = estimate(&batch, &ValueTables::zeros(ns, m), &EstimatorConfig::new(spec.discount), &spec.initial_dist).unwrap();
    let mut params = sampler.clone();
    for w in params.weights.iter_mut() {
        *w += 0.3 * (2.0 * rng.random::<f64>() - 1.0);
    }
    Fixture { spec, sampler, params, batch, est }
}

/// Distance of the nearest ratio to a clipping kink.
fn clip_margin(f: &Fixture, clip: f64) -> f64 {
    let a = f.params.num_actions();
    let logp = f.params.log_prob_table();
    (0..f.batch.len())
        .map(|n| {
            let r = (logp[f.batch.state[n] * a + f.batch.action[n]] - f.batch.old_log_prob[n]).exp();
            (r - 1.0 + clip).abs().min((r - 1.0 - clip).abs())
        })
        .fold(f64::INFINITY, f64::min)
}

/// Objective whose barrier arguments all sit `margin` inside the domain.
fn objective(f: &Fixture, kind: StageKind, scale: SurrogateScale, margin: f64) -> StageObjective {
    let m = f.spec.num_costs();
    let mut obj = StageObjective::new(kind, vec![0.0; m], f.spec.discount);
    obj.surrogate_scale = scale;
    obj.active_costs = (0..m).collect();
    let frozen = (kind == StageKind::Projection).then_some(&f.sampler);
    let args = stage_evaluate(&f.batch, &f.est, &f.params, &obj, frozen).unwrap().value.barrier_arguments;
    if kind == StageKind::MinCost {
        obj.reward_budget = -args[0] - margin;
    } else {
        obj.cost_budget = args.iter().map(|x| x + margin).collect();
    }
    obj
}

fn fd_error(f: &Fixture, obj: &StageObjective) -> f64 {
    let frozen = (obj.kind == StageKind::Projection).then_some(&f.sampler);
    let value = |p: &PolicyParams| stage_evaluate(&f.batch, &f.est, p, obj, frozen).unwrap().value.objective;
    let analytic = stage_evaluate(&f.batch, &f.est, &f.params, obj, frozen).unwrap();
    assert!(analytic.value.domain_ok);
    let h = 1e-5;
    let fd: Vec<f64> = (0..f.params.weights.len())
        .map(|j| {
            let (mut hi, mut lo) = (f.params.clone(), f.params.clone());
            hi.weights[j] += h;
            lo.weights[j] -= h;
            (value(&hi) - value(&lo)) / (2.0 * h)
        })
        .collect();
    let scale = fd.iter().fold(1e-6f64, |a, g| a.max(g.abs()));
    analytic.grad.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

fn kind_strategy() -> impl Strategy<Value = StageKind> {
    prop_oneof![Just(StageKind::MaxReward), Just(StageKind::MinCost), Just(StageKind::Projection)]
}

fn scale_strategy() -> impl Strategy<Value = SurrogateScale> {
    prop_oneof![Just(SurrogateScale::EpisodeSum), Just(SurrogateScale::HorizonMean)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stage_gradients_match_finite_differences(
        seed in 0u64..10_000,
        m in 1usize..=2,
        kind in kind_strategy(),
        scale in scale_strategy(),
        margin in 0.05f64..2.0,
    ) {
        let f = fixture(seed, m, 400);
        prop_assume!(clip_margin(&f, 0.2) > 1e-3);
        let obj = objective(&f, kind, scale, margin);
        let err = fd_error(&f, &obj);
        prop_assert!(err <= 1e-4, "relative error {err}");
    }

    #[test]
    fn barrier_argument_matches_direct_sum(seed in 0u64..10_000, m in 1usize..=2, budget in -2.0f64..5.0) {
        let f = fixture(seed, m, 300);
        let a = f.params.num_actions();
        let logp = f.params.log_prob_table();
        let episodes = f.batch.step_index.iter().filter(|&&t| t == 0).count() as f64;
        let g = f.spec.discount;
        for i in 0..m {
            let (mut per_episode, mut mean) = (0.0, 0.0);
            for n in 0..f.batch.len() {
                let r = (logp[f.batch.state[n] * a + f.batch.action[n]] - f.batch.old_log_prob[n]).exp();
                per_episode += g.powi(f.batch.step_index[n] as i32) * r * f.est.adv_cost[i][n];
                mean += r * f.est.adv_cost[i][n];
            }
            let sum = f.est.episode_cost_returns[i] + per_episode / episodes - budget;
            let horizon = f.est.episode_cost_returns[i] + mean / f.batch.len() as f64 / (1.0 - g) - budget;
            let got_sum = surrogate_cost_constraint(&f.batch, &f.est, &f.params, budget, i, g, SurrogateScale::EpisodeSum).unwrap();
            let got_mean = surrogate_cost_constraint(&f.batch, &f.est, &f.params, budget, i, g, SurrogateScale::HorizonMean).unwrap();
            prop_assert!((got_sum - sum).abs() <= 1e-9 * (1.0 + sum.abs()));
            prop_assert!((got_mean - horizon).abs() <= 1e-9 * (1.0 + horizon.abs()));
        }
    }
}

#[test]
fn barrier_matches_stage_evaluate_arguments() {
    let f = fixture(3, 2, 500);
    let mut obj = StageObjective::new(StageKind::MaxReward, vec![100.0, 100.0], f.spec.discount);
    obj.surrogate_scale = SurrogateScale::EpisodeSum;
    let args = stage_evaluate(&f.batch, &f.est, &f.params, &obj, None).unwrap().value.barrier_arguments;
    for (i, x) in args.iter().enumerate() {
        let direct = surrogate_cost_constraint(&f.batch, &f.est, &f.params, 100.0, i, f.spec.discount, obj.surrogate_scale).unwrap();
        assert!((x - direct).abs() < 1e-12);
    }
}

#[test]
fn projection_penalty_is_the_batch_kl() {
    let f = fixture(9, 1, 500);
    let mut obj = StageObjective::new(StageKind::Projection, vec![1e6], f.spec.discount);
    obj.barrier_cap = 1e9;
    let at = |p: &PolicyParams| stage_evaluate(&f.batch, &f.est, p, &obj, Some(&f.sampler)).unwrap().value.objective;
    // the barrier term barely moves between two nearby-in-return policies
    // with a huge budget, so the difference isolates the KL penalty
    let barrier = |p: &PolicyParams| {
        let x = surrogate_cost_constraint(&f.batch, &f.est, p, 1e6, 0, f.spec.discount, obj.surrogate_scale).unwrap();
        barrier_phi(x, obj.barrier_t, obj.barrier_cap)
    };
    let per_state = kl_per_state(&f.params, &f.sampler).unwrap();
    let ns = f.params.num_states;
    let mut counts = vec![0.0; ns];
    for &s in &f.batch.state {
        counts[s] += 1.0 / f.batch.len() as f64;
    }
    let kl: f64 = per_state.iter().zip(&counts).map(|(k, w)| k * w).sum();
    let penalty = barrier(&f.params) - at(&f.params);
    assert!(kl > 1e-4);
    assert!((penalty - kl).abs() < 1e-10, "penalty {penalty} vs kl {kl}");
    assert!((barrier(&f.sampler) - at(&f.sampler)).abs() < 1e-12);
}

#[test]
fn barrier_is_increasing_clamped_and_saturated() {
    let (t, cap) = (25.0, 25.0);
    let xs: Vec<f64> = (1..2000).map(|i| -10.0 + i as f64 * 0.005).filter(|x: &f64| *x < 0.0).collect();
    assert!(xs.windows(2).all(|w| barrier_phi(w[0], t, cap) >= barrier_phi(w[1], t, cap)));
    for &x in &xs {
        let h = 1e-7 * x.abs();
        let fd = (barrier_phi(x + h, t, cap) - barrier_phi(x - h, t, cap)) / (2.0 * h);
        assert!((fd - barrier_phi_slope(x, t, cap)).abs() <= 1e-5 * (1.0 + fd.abs()));
    }
    assert_eq!(barrier_phi(0.0, t, cap), -cap);
    assert_eq!(barrier_phi(3.0, t, cap), -cap);
    assert_eq!(barrier_phi_slope(1.0, t, cap), 0.0);
    assert_eq!(barrier_phi(-1e-300, t, 1.0), -1.0);
    assert!(barrier_phi(-1e300, t, 1.0) <= 1.0);
    // a tighter barrier (larger t) is closer to the indicator everywhere inside
    assert!(barrier_phi(-0.5, 50.0, cap).abs() < barrier_phi(-0.5, 10.0, cap).abs());
}

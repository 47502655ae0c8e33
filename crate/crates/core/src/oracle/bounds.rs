use alloc::format;
use alloc::vec::Vec;

use super::BoundReport;
use crate::cmdp::CmdpSpec;
use crate::error::{bail, Result};
use crate::estimation::{exact_eval_table, ExactEval};
use crate::math;
use crate::policy::PolicyParams;
use crate::scheduler::{BudgetEvent, RunResult, StageConfig};
use crate::stage::StageKind;

/// `max_s |Σ_a π_next(a|s) A(s,a)|` for an advantage table.
fn eps_of(adv: &[f64], next: &[f64], na: usize) -> f64 {
    adv.chunks(na)
        .zip(next.chunks(na))
        .map(|(a, p)| a.iter().zip(p).map(|(x, y)| x * y).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

/// `E_{s~d_old}[KL(new(.|s) || old(.|s))]`; infinite when `new` leaves the support of `old`.
fn visitation_kl(visitation: &[f64], new: &[f64], old: &[f64], na: usize) -> f64 {
    let mut total = 0.0;
    for (s, &w) in visitation.iter().enumerate() {
        let mut kl = 0.0;
        for k in 0..na {
            let (p, q) = (new[s * na + k], old[s * na + k]);
            if p > 0.0 {
                if q <= 0.0 {
                    return f64::INFINITY;
                }
                kl += p * (math::ln(p) - math::ln(q));
            }
        }
        total += w * kl.max(0.0);
    }
    total.max(0.0)
}

/// `(ε_R, ε_C)` of the pair: the largest expected advantage of `prev`'s
/// advantages under `next`, over all states.
pub fn epsilons(spec: &CmdpSpec, prev: &PolicyParams, next: &PolicyParams) -> Result<(f64, Vec<f64>)> {
    next.check_compatible(spec.num_states, spec.num_actions)?;
    let e = crate::estimation::exact_eval(spec, prev)?;
    Ok(eps_from_eval(&e, &next.prob_table()))
}

fn eps_from_eval(e: &ExactEval, next: &[f64]) -> (f64, Vec<f64>) {
    let na = e.num_actions;
    (eps_of(&e.adv_reward(), next, na), (0..e.v_cost.len()).map(|i| eps_of(&e.adv_cost(i), next, na)).collect())
}

/// Checks both directions of the performance-difference bound for the reward
/// and every cost, on explicit policy tables.
pub fn check_performance_bound_tables(spec: &CmdpSpec, old: &[f64], new: &[f64]) -> Result<Vec<BoundReport>> {
    let nsa = spec.num_states * spec.num_actions;
    if old.len() != nsa || new.len() != nsa {
        bail!(Argument, "policy tables must have {nsa} entries");
    }
    let na = spec.num_actions;
    let g = spec.discount;
    let e_old = exact_eval_table(spec, old)?;
    let e_new = exact_eval_table(spec, new)?;
    let kl = visitation_kl(&e_old.visitation, new, old, na);
    let coef = math::sqrt(2.0) * g / ((1.0 - g) * (1.0 - g));

    let mut signals: Vec<(alloc::string::String, Vec<f64>, f64)> =
        alloc::vec![("reward".into(), e_old.adv_reward(), e_new.j_reward - e_old.j_reward)];
    for i in 0..spec.num_costs() {
        signals.push((format!("cost{i}"), e_old.adv_cost(i), e_new.j_cost[i] - e_old.j_cost[i]));
    }
    let mut out = Vec::new();
    for (name, adv, gap) in signals {
        let eps = eps_of(&adv, new, na);
        let mut surrogate = 0.0;
        for s in 0..spec.num_states {
            let expected: f64 = (0..na).map(|k| new[s * na + k] * adv[s * na + k]).sum();
            surrogate += e_old.visitation[s] * expected;
        }
        surrogate /= 1.0 - g;
        let penalty = if eps == 0.0 { 0.0 } else { coef * eps * math::sqrt(kl) };
        let lower = BoundReport::new(&format!("performance-lower-{name}"), surrogate - penalty, gap);
        let upper = BoundReport::new(&format!("performance-upper-{name}"), gap, surrogate + penalty);
        for mut r in [lower, upper] {
            if name == "reward" {
                r.eps_r = eps;
            } else {
                r.eps_c = eps;
            }
            out.push(r.with_detail("kl", kl).with_detail("surrogate", surrogate));
        }
    }
    Ok(out)
}

/// Performance-difference bound check for two parameterized policies.
pub fn check_performance_bound(spec: &CmdpSpec, old: &PolicyParams, new: &PolicyParams) -> Result<Vec<BoundReport>> {
    old.check_compatible(spec.num_states, spec.num_actions)?;
    new.check_compatible(spec.num_states, spec.num_actions)?;
    check_performance_bound_tables(spec, &old.prob_table(), &new.prob_table())
}

struct Checkpoint {
    eval: ExactEval,
    table: Vec<f64>,
}

/// Checks the per-stage-pair update bounds of an ACPO trace.
///
/// `g^k` is the exact reward return of the policy handed from a max-reward
/// stage to a min-cost stage, `d^{k+1}` the exact cost return of the policy
/// handed back. Consecutive pairs inside one alternation segment (no
/// convergence event in between) are checked against
/// `g^k − g^{k−1} ≥ −n1/((1−γ)t) − √(2δ)γ/(1−γ)²·(n1+n2)·ε_R` and
/// `d^{k+1} − d^k ≤ n2/((1−γ)t) + √(2δ)γ/(1−γ)²·(n1+n2)·ε_C`, with `ε` and
/// `δ` measured exactly over the updates between the two hand-offs.
pub fn check_stage_pair_bounds(spec: &CmdpSpec, run: &RunResult, cfg: &StageConfig) -> Result<Vec<BoundReport>> {
    if run.policies.len() < run.records.len() {
        return Ok(alloc::vec![BoundReport::skipped("stage-pair", "missing policy checkpoints")]);
    }
    let na = spec.num_actions;
    let gamma = spec.discount;
    let mut cache: Vec<Option<Checkpoint>> = (0..run.policies.len()).map(|_| None).collect();
    let get = |cache: &mut Vec<Option<Checkpoint>>, k: usize| -> Result<()> {
        if cache[k].is_none() {
            let table = run.policies[k].prob_table();
            let eval = exact_eval_table(spec, &table)?;
            cache[k] = Some(Checkpoint { eval, table });
        }
        Ok(())
    };
    let coef = gamma / ((1.0 - gamma) * (1.0 - gamma));
    let n_sum = (cfg.n1 + cfg.n2) as f64;

    let mut out = Vec::new();
    let mut prev_g: Option<usize> = None;
    let mut prev_d: Option<usize> = None;
    for rec in &run.records {
        let k = rec.iter;
        match rec.event {
            BudgetEvent::ToMinCost | BudgetEvent::ToMaxReward => {}
            BudgetEvent::Hold => continue,
            _ => {
                prev_g = None;
                prev_d = None;
                continue;
            }
        }
        get(&mut cache, k)?;
        let is_g = rec.event == BudgetEvent::ToMinCost;
        let prev = if is_g { prev_g } else { prev_d };
        if let Some(k0) = prev {
            let mut eps_r: f64 = 0.0;
            let mut eps_c = alloc::vec![0.0f64; spec.num_costs()];
            let mut delta: f64 = 0.0;
            let mut batch_kl: f64 = 0.0;
            for j in k0..k {
                get(&mut cache, j)?;
                get(&mut cache, j + 1)?;
                let (a, b) = (cache[j].as_ref().unwrap(), cache[j + 1].as_ref().unwrap());
                let (er, ec) = eps_from_eval(&a.eval, &b.table);
                eps_r = eps_r.max(er);
                for (m, e) in eps_c.iter_mut().zip(ec) {
                    *m = m.max(e);
                }
                delta = delta.max(visitation_kl(&a.eval.visitation, &b.table, &a.table, na));
                batch_kl = batch_kl.max(run.records.get(j).map_or(0.0, |r| r.kl));
            }
            let root = math::sqrt(2.0 * delta);
            let (c0, c1) = (cache[k0].as_ref().unwrap(), cache[k].as_ref().unwrap());
            if is_g {
                let interior = cfg.n1 as f64 / ((1.0 - gamma) * cfg.barrier_t);
                let bound = -interior - root * coef * n_sum * eps_r;
                let mut r = BoundReport::new("stage-pair-reward", bound, c1.eval.j_reward - c0.eval.j_reward);
                r.eps_r = eps_r;
                r.iter = Some(k);
                r.stage = Some(StageKind::MaxReward);
                out.push(
                    r.with_detail("delta_measured", delta)
                        .with_detail("delta_configured", cfg.trust_region)
                        .with_detail("batch_kl_max", batch_kl)
                        .with_detail("interior_term", interior),
                );
            } else {
                let interior = cfg.n2 as f64 / ((1.0 - gamma) * cfg.barrier_t);
                for i in 0..spec.num_costs() {
                    let bound = interior + root * coef * n_sum * eps_c[i];
                    let mut r = BoundReport::new(
                        &format!("stage-pair-cost{i}"),
                        c1.eval.j_cost[i] - c0.eval.j_cost[i],
                        bound,
                    );
                    r.eps_c = eps_c[i];
                    r.iter = Some(k);
                    r.stage = Some(StageKind::MinCost);
                    out.push(
                        r.with_detail("delta_measured", delta)
                            .with_detail("delta_configured", cfg.trust_region)
                            .with_detail("batch_kl_max", batch_kl)
                            .with_detail("interior_term", interior),
                    );
                }
            }
        }
        if is_g {
            prev_g = Some(k);
        } else {
            prev_d = Some(k);
        }
    }
    if out.is_empty() {
        out.push(BoundReport::skipped("stage-pair", "trace contains no complete stage pair"));
    }
    Ok(out)
}

use alloc::vec;
use alloc::vec::Vec;

use crate::cmdp::CmdpSpec;
use crate::error::Result;
use crate::math::Lu;
use crate::policy::PolicyParams;

/// Exact infinite-horizon evaluation of a stationary policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactEval {
    pub num_states: usize,
    pub num_actions: usize,
    pub v_reward: Vec<f64>,
    pub v_cost: Vec<Vec<f64>>,
    /// `|S| x |A|`
    pub q_reward: Vec<f64>,
    pub q_cost: Vec<Vec<f64>>,
    /// Normalized discounted state visitation `d_π`.
    pub visitation: Vec<f64>,
    pub j_reward: f64,
    pub j_cost: Vec<f64>,
    /// Action probabilities the evaluation used.
    pub policy: Vec<f64>,
}

impl ExactEval {
    pub fn adv_reward(&self) -> Vec<f64> {
        advantage(&self.q_reward, &self.v_reward, self.num_actions)
    }

    pub fn adv_cost(&self, i: usize) -> Vec<f64> {
        advantage(&self.q_cost[i], &self.v_cost[i], self.num_actions)
    }

    /// `‖V − (r_π + γ P_π V)‖∞` for the reward values.
    pub fn bellman_residual(&self, spec: &CmdpSpec) -> f64 {
        let a = self.num_actions;
        let mut worst: f64 = 0.0;
        for s in 0..self.num_states {
            let mut backup = 0.0;
            for k in 0..a {
                let p = self.policy[s * a + k];
                let mut q = spec.reward[spec.sa(s, k)];
                for (next, &pn) in spec.transition_row(s, k).iter().enumerate() {
                    q += spec.discount * pn * self.v_reward[next];
                }
                backup += p * q;
            }
            worst = worst.max((self.v_reward[s] - backup).abs());
        }
        worst
    }
}

fn advantage(q: &[f64], v: &[f64], a: usize) -> Vec<f64> {
    q.iter().enumerate().map(|(i, qv)| qv - v[i / a]).collect()
}

/// Evaluates an explicit `|S| x |A|` action-probability table.
pub fn exact_eval_table(spec: &CmdpSpec, policy: &[f64]) -> Result<ExactEval> {
    let (n, a, g) = (spec.num_states, spec.num_actions, spec.discount);
    let mut p_pi = vec![0.0; n * n];
    let mut r_pi = vec![0.0; n];
    let mut c_pi = vec![vec![0.0; n]; spec.num_costs()];
    for s in 0..n {
        for k in 0..a {
            let pk = policy[s * a + k];
            if pk == 0.0 {
                continue;
            }
            let sa = spec.sa(s, k);
            r_pi[s] += pk * spec.reward[sa];
            for (i, c) in spec.costs.iter().enumerate() {
                c_pi[i][s] += pk * c[sa];
            }
            for (next, &pn) in spec.transition_row(s, k).iter().enumerate() {
                p_pi[s * n + next] += pk * pn;
            }
        }
    }
    let mut m = vec![0.0; n * n];
    let mut mt = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let e = if i == j { 1.0 } else { 0.0 } - g * p_pi[i * n + j];
            m[i * n + j] = e;
            mt[j * n + i] = e;
        }
    }
    let lu = Lu::factor(n, m)?;
    let v_reward = lu.solve(&r_pi);
    let v_cost: Vec<Vec<f64>> = c_pi.iter().map(|c| lu.solve(c)).collect();
    let rhs: Vec<f64> = spec.initial_dist.iter().map(|p| (1.0 - g) * p).collect();
    let visitation = Lu::factor(n, mt)?.solve(&rhs);

    let q_of = |r: &[f64], v: &[f64]| {
        let mut q = vec![0.0; n * a];
        for s in 0..n {
            for k in 0..a {
                let mut val = r[spec.sa(s, k)];
                for (next, &pn) in spec.transition_row(s, k).iter().enumerate() {
                    val += g * pn * v[next];
                }
                q[s * a + k] = val;
            }
        }
        q
    };
    let q_reward = q_of(&spec.reward, &v_reward);
    let q_cost = spec.costs.iter().zip(&v_cost).map(|(c, v)| q_of(c, v)).collect();
    let dot = |v: &[f64]| v.iter().zip(&spec.initial_dist).map(|(x, p)| x * p).sum::<f64>();
    let j_reward = dot(&v_reward);
    let j_cost = v_cost.iter().map(|v| dot(v)).collect();
    Ok(ExactEval {
        num_states: n,
        num_actions: a,
        v_reward,
        v_cost,
        q_reward,
        q_cost,
        visitation,
        j_reward,
        j_cost,
        policy: policy.to_vec(),
    })
}

/// Solves `(I − γP_π)V = r_π` for the reward and every cost, and
/// `d_π = (1−γ)(I − γP_πᵀ)⁻¹ρ₀` for the visitation.
pub fn exact_eval(spec: &CmdpSpec, params: &PolicyParams) -> Result<ExactEval> {
    params.check_compatible(spec.num_states, spec.num_actions)?;
    exact_eval_table(spec, &params.prob_table())
}

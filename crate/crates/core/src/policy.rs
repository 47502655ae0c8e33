//! Softmax policies over finite action sets.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    TabularSoftmax,
    LinearSoftmax,
}

/// Policy parameters θ.
///
/// Tabular: `weights` is `|S| x |A|` logits. Linear: `weights` is `F x |A|`
/// and `features` holds the `|S| x F` feature matrix, so the logits of state
/// `s` are `features[s] · weights`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyParams {
    pub parameterization: Parameterization,
    /// `[rows, num_actions]` of the weight tensor.
    pub shape: [usize; 2],
    pub weights: Vec<f64>,
    pub num_states: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

/// Action distribution at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDist {
    pub probs: Vec<f64>,
}

impl PolicyParams {
    /// Uniform tabular policy (all-zero logits).
    pub fn tabular(num_states: usize, num_actions: usize) -> Self {
        Self {
            parameterization: Parameterization::TabularSoftmax,
            shape: [num_states, num_actions],
            weights: vec![0.0; num_states * num_actions],
            num_states,
            features: None,
        }
    }

    pub fn tabular_from_logits(num_states: usize, num_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != num_states * num_actions {
            bail!(Argument, "expected {} logits, got {}", num_states * num_actions, logits.len());
        }
        let p = Self { weights: logits, ..Self::tabular(num_states, num_actions) };
        p.check_finite()?;
        Ok(p)
    }

    /// Linear-softmax policy with zero weights over a `num_states x num_features` feature matrix.
    pub fn linear(features: Vec<f64>, num_states: usize, num_actions: usize) -> Result<Self> {
        if num_states == 0 || features.len() % num_states != 0 {
            bail!(Argument, "feature matrix of {} entries is not {num_states} rows", features.len());
        }
        let f = features.len() / num_states;
        if features.iter().any(|v| !v.is_finite()) {
            bail!(Numeric, "non-finite feature value");
        }
        Ok(Self {
            parameterization: Parameterization::LinearSoftmax,
            shape: [f, num_actions],
            weights: vec![0.0; f * num_actions],
            num_states,
            features: Some(features),
        })
    }

    #[inline]
    pub fn num_actions(&self) -> usize {
        self.shape[1]
    }

    pub fn validate(&self) -> Result<()> {
        let [rows, a] = self.shape;
        if self.weights.len() != rows * a {
            bail!(Invariant, "weights have {} entries, shape says {}", self.weights.len(), rows * a);
        }
        match self.parameterization {
            Parameterization::TabularSoftmax => {
                if rows != self.num_states {
                    bail!(Invariant, "tabular rows {rows} != num_states {}", self.num_states);
                }
            }
            Parameterization::LinearSoftmax => match &self.features {
                Some(f) if f.len() == self.num_states * rows => {}
                _ => bail!(Invariant, "linear policy needs a {}x{rows} feature matrix", self.num_states),
            },
        }
        self.check_finite()
    }

    /// Checks the policy is bound to a spec with the given sizes.
    pub fn check_compatible(&self, num_states: usize, num_actions: usize) -> Result<()> {
        if self.num_states != num_states || self.num_actions() != num_actions {
            bail!(
                Argument,
                "policy is {}x{}, spec is {num_states}x{num_actions}",
                self.num_states,
                self.num_actions()
            );
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        if self.weights.iter().any(|w| !w.is_finite()) {
            bail!(Numeric, "non-finite policy parameters");
        }
        Ok(())
    }

    /// Writes the logits of `state` into `out`.
    pub fn logits_into(&self, state: usize, out: &mut [f64]) {
        let a = self.num_actions();
        match self.parameterization {
            Parameterization::TabularSoftmax => out.copy_from_slice(&self.weights[state * a..(state + 1) * a]),
            Parameterization::LinearSoftmax => {
                let f = self.shape[0];
                let feats = &self.features.as_ref().expect("validated linear policy")[state * f..(state + 1) * f];
                out.iter_mut().for_each(|o| *o = 0.0);
                for (j, &phi) in feats.iter().enumerate() {
                    if phi != 0.0 {
                        for (k, o) in out.iter_mut().enumerate() {
                            *o += phi * self.weights[j * a + k];
                        }
                    }
                }
            }
        }
    }

    pub fn action_dist(&self, state: usize) -> Result<PolicyDist> {
        if state >= self.num_states {
            bail!(Argument, "state {state} out of range");
        }
        let mut logits = vec![0.0; self.num_actions()];
        self.logits_into(state, &mut logits);
        if logits.iter().any(|l| !l.is_finite()) {
            bail!(Numeric, "non-finite logits at state {state}");
        }
        let mut probs = vec![0.0; logits.len()];
        math::softmax_into(&logits, &mut probs);
        Ok(PolicyDist { probs })
    }

    /// `|S| x |A|` table of action probabilities.
    pub fn prob_table(&self) -> Vec<f64> {
        let a = self.num_actions();
        let mut logits = vec![0.0; a];
        let mut out = vec![0.0; self.num_states * a];
        for s in 0..self.num_states {
            self.logits_into(s, &mut logits);
            math::softmax_into(&logits, &mut out[s * a..(s + 1) * a]);
        }
        out
    }

    /// `|S| x |A|` table of log-probabilities.
    pub fn log_prob_table(&self) -> Vec<f64> {
        let a = self.num_actions();
        let mut logits = vec![0.0; a];
        let mut out = vec![0.0; self.num_states * a];
        for s in 0..self.num_states {
            self.logits_into(s, &mut logits);
            math::log_softmax_into(&logits, &mut out[s * a..(s + 1) * a]);
        }
        out
    }

    /// Chain rule from per-state logit gradients (`|S| x |A|`) to a gradient shaped like `weights`.
    pub fn backprop_logits(&self, grad_logits: &[f64]) -> Vec<f64> {
        match self.parameterization {
            Parameterization::TabularSoftmax => grad_logits.to_vec(),
            Parameterization::LinearSoftmax => {
                let [f, a] = self.shape;
                let feats = self.features.as_ref().expect("validated linear policy");
                let mut g = vec![0.0; f * a];
                for s in 0..self.num_states {
                    let gl = &grad_logits[s * a..(s + 1) * a];
                    if gl.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    for j in 0..f {
                        let phi = feats[s * f + j];
                        if phi != 0.0 {
                            for k in 0..a {
                                g[j * a + k] += phi * gl[k];
                            }
                        }
                    }
                }
                g
            }
        }
    }

    /// Deterministic greedy policy table used by tests and reports.
    pub fn greedy_actions(&self) -> Vec<usize> {
        let a = self.num_actions();
        let probs = self.prob_table();
        (0..self.num_states)
            .map(|s| {
                let row = &probs[s * a..(s + 1) * a];
                (0..a).fold(0, |best, k| if row[k] > row[best] { k } else { best })
            })
            .collect()
    }
}

/// KL(p || q) between two discrete distributions.
pub fn kl_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                bail!(Numeric, "q assigns zero probability where p does not");
            }
            kl += pi * (math::ln(pi) - math::ln(qi));
        }
    }
    Ok(kl.max(0.0))
}

/// Per-state KL(p(.|s) || q(.|s)) computed in log space.
pub fn kl_per_state(p: &PolicyParams, q: &PolicyParams) -> Result<Vec<f64>> {
    if p.num_states != q.num_states || p.num_actions() != q.num_actions() {
        bail!(Argument, "policies bound to different spaces");
    }
    let a = p.num_actions();
    let lp = p.log_prob_table();
    let lq = q.log_prob_table();
    let mut out = Vec::with_capacity(p.num_states);
    for s in 0..p.num_states {
        let mut kl = 0.0;
        for k in 0..a {
            let l = lp[s * a + k];
            let pk = math::exp(l);
            if pk > 0.0 {
                let diff = l - lq[s * a + k];
                if !diff.is_finite() {
                    bail!(Numeric, "{}", format!("infinite log-ratio at state {s}"));
                }
                kl += pk * diff;
            }
        }
        out.push(kl.max(0.0));
    }
    Ok(out)
}

/// State-weighted KL divergence `E_{s~w}[KL(p(.|s) || q(.|s))]`.
pub fn kl_divergence(p: &PolicyParams, q: &PolicyParams, state_weights: &[f64]) -> Result<f64> {
    if state_weights.len() != p.num_states {
        bail!(Argument, "expected {} state weights", p.num_states);
    }
    let total: f64 = state_weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        bail!(Argument, "state weights sum to {total}");
    }
    let per = kl_per_state(p, q)?;
    Ok(per.iter().zip(state_weights).map(|(k, w)| k * w).sum())
}

/// Adam ascent state for a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One ascent step along `grad`.
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - math::powi(self.beta1, self.t);
        let c2 = 1.0 - math::powi(self.beta2, self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] += self.lr * mh / (math::sqrt(vh) + self.eps);
        }
    }
}

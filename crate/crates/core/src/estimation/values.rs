use alloc::vec;
use alloc::vec::Vec;

use super::{EstimateSet, EstimatorConfig, TrajectoryBatch};
use crate::error::{bail, Result};

/// State-value function: a table, or linear in a fixed feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueFunction {
    Tabular(Vec<f64>),
    Linear { features: Vec<f64>, num_features: usize, weights: Vec<f64> },
}

impl ValueFunction {
    pub fn zeros(num_states: usize) -> Self {
        ValueFunction::Tabular(vec![0.0; num_states])
    }

    /// Per-state values.
    pub fn table(&self, num_states: usize) -> Vec<f64> {
        match self {
            ValueFunction::Tabular(v) => v.clone(),
            ValueFunction::Linear { features, num_features, weights } => (0..num_states)
                .map(|s| {
                    features[s * num_features..(s + 1) * num_features]
                        .iter()
                        .zip(weights)
                        .map(|(f, w)| f * w)
                        .sum()
                })
                .collect(),
        }
    }
}

/// Value functions for the reward and every cost.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub reward: ValueFunction,
    pub costs: Vec<ValueFunction>,
}

impl ValueTables {
    pub fn zeros(num_states: usize, num_costs: usize) -> Self {
        Self {
            reward: ValueFunction::zeros(num_states),
            costs: (0..num_costs).map(|_| ValueFunction::zeros(num_states)).collect(),
        }
    }

    /// Refits every table to the targets of `estimate`.
    pub fn fit(&mut self, batch: &TrajectoryBatch, estimate: &EstimateSet, cfg: &EstimatorConfig) -> Result<()> {
        fit_values(&mut self.reward, batch, &estimate.value_targets_reward, cfg)?;
        for (v, t) in self.costs.iter_mut().zip(&estimate.value_targets_cost) {
            fit_values(v, batch, t, cfg)?;
        }
        Ok(())
    }
}

/// Least-squares fit of `value` to per-transition `targets`.
///
/// A table takes the per-state mean (the exact minimizer); states absent from
/// the batch keep their previous value. A linear function takes
/// `cfg.value_fit_epochs` full-batch gradient steps.
pub fn fit_values(
    value: &mut ValueFunction,
    batch: &TrajectoryBatch,
    targets: &[f64],
    cfg: &EstimatorConfig,
) -> Result<()> {
    if targets.len() != batch.len() {
        bail!(Argument, "{} targets for {} transitions", targets.len(), batch.len());
    }
    if targets.iter().any(|t| !t.is_finite()) {
        bail!(Numeric, "non-finite value target");
    }
    match value {
        ValueFunction::Tabular(table) => {
            let mut sum = vec![0.0; table.len()];
            let mut count = vec![0usize; table.len()];
            for (&s, &t) in batch.state.iter().zip(targets) {
                sum[s] += t;
                count[s] += 1;
            }
            for s in 0..table.len() {
                if count[s] > 0 {
                    table[s] = sum[s] / count[s] as f64;
                }
            }
        }
        ValueFunction::Linear { features, num_features, weights } => {
            let f = *num_features;
            let n = batch.len() as f64;
            for _ in 0..cfg.value_fit_epochs {
                let mut grad = vec![0.0; f];
                for (&s, &t) in batch.state.iter().zip(targets) {
                    let phi = &features[s * f..(s + 1) * f];
                    let pred: f64 = phi.iter().zip(weights.iter()).map(|(a, b)| a * b).sum();
                    let err = pred - t;
                    for j in 0..f {
                        grad[j] += 2.0 * err * phi[j] / n;
                    }
                }
                for j in 0..f {
                    weights[j] -= cfg.value_learning_rate * grad[j];
                }
            }
        }
    }
    Ok(())
}

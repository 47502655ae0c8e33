use alloc::vec;
use alloc::vec::Vec;

use super::TrajectoryBatch;
use crate::error::{bail, Result};
use crate::math;

/// Which per-transition signal to estimate advantages for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    Reward,
    Cost(usize),
}

/// Generalized advantage estimation over a batch.
///
/// Returns `(advantages, value_targets)` with `target = advantage + V(s_t)`.
/// Accumulation stops at episode boundaries. An absorbing end contributes a
/// bootstrap value of zero; a horizon cut or the end of the batch contributes
/// `V(s')` when `bootstrap_truncated` is set and zero otherwise.
pub fn gae(
    batch: &TrajectoryBatch,
    values: &[f64],
    gamma: f64,
    lambda: f64,
    signal: Signal,
    bootstrap_truncated: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let signal_values: &[f64] = match signal {
        Signal::Reward => &batch.reward,
        Signal::Cost(i) => match batch.costs.get(i) {
            Some(c) => c,
            None => bail!(Argument, "cost index {i} out of range"),
        },
    };
    let n = batch.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let continues = t + 1 < n && !batch.done[t] && batch.episode_id[t + 1] == batch.episode_id[t];
        let next_value = if batch.terminal[t] {
            0.0
        } else if continues || bootstrap_truncated {
            values[batch.next_state[t]]
        } else {
            0.0
        };
        let delta = signal_values[t] + gamma * next_value - values[batch.state[t]];
        acc = if continues { delta + gamma * lambda * acc } else { delta };
        adv[t] = acc;
    }
    let targets = adv.iter().zip(&batch.state).map(|(a, &s)| a + values[s]).collect();
    Ok((adv, targets))
}

/// Zero-mean, unit-variance copy. Constant inputs map to zeros.
pub fn normalize(xs: &[f64]) -> Vec<f64> {
    let (Some(m), Some(sd)) = (math::mean(xs), math::std_dev(xs)) else {
        return Vec::new();
    };
    if sd < 1e-12 {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - m) / (sd + 1e-8)).collect()
}

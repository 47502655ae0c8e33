//! Benchmark CMDP families.
//!
//! * `hazard-goal`: an `n x n` grid. The agent starts in the bottom-left
//!   corner and is paid 1 for entering the bottom-right goal. The columns
//!   between them form a hazard field whose per-step cost fades linearly
//!   from the bottom row to zero in the top row, so every detour height
//!   trades a longer route for a lower cost. A straight crossing along the
//!   bottom row costs about 1.
//! * `trap`: a start state choosing between a short near corridor (small
//!   reward, no cost) and a far corridor of `n` cells (large reward, a per-step
//!   cost inside the corridor). Every corridor cell also offers an exit that
//!   ends the episode with nothing. Under a tight cost budget the exit looks
//!   attractive before the corridor has been learned, which leaves a
//!   fixed-budget learner on the near corridor.
//! * `two-cost`: the hazard-goal layout with the field split into a left and
//!   a right half, each producing its own cost signal.
//!
//! Goal and exit states are absorbing with zero reward and cost, so episodes
//! end there.

use alloc::string::String;
use alloc::vec;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmdp::CmdpSpec;
use crate::error::{bail, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    HazardGoal,
    Trap,
    TwoCost,
}

impl FromStr for GridKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hazard-goal" => Ok(GridKind::HazardGoal),
            "trap" => Ok(GridKind::Trap),
            "two-cost" => Ok(GridKind::TwoCost),
            other => Err(Error::Argument(alloc::format!("unknown gridworld kind '{other}'"))),
        }
    }
}

impl GridKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GridKind::HazardGoal => "hazard-goal",
            GridKind::Trap => "trap",
            GridKind::TwoCost => "two-cost",
        }
    }
}

/// Parameters of a benchmark family instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub kind: GridKind,
    pub size: usize,
    pub seed: u64,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Probability that a grid move is replaced by a uniformly random move.
    #[serde(default)]
    pub slip: f64,
    /// Relative jitter applied to hazard costs, drawn from the seed.
    #[serde(default = "default_jitter")]
    pub cost_jitter: f64,
}

fn default_discount() -> f64 {
    0.99
}

fn default_horizon() -> usize {
    200
}

fn default_jitter() -> f64 {
    0.1
}

impl GridParams {
    pub fn new(kind: GridKind, size: usize, seed: u64) -> Self {
        Self {
            kind,
            size,
            seed,
            discount: default_discount(),
            horizon: default_horizon(),
            slip: 0.0,
            cost_jitter: default_jitter(),
        }
    }

    pub fn build(&self) -> Result<CmdpSpec> {
        if self.size < 3 {
            bail!(Argument, "gridworld size must be at least 3, got {}", self.size);
        }
        if !(0.0..1.0).contains(&self.slip) {
            bail!(Argument, "slip {} outside [0,1)", self.slip);
        }
        if !(0.0..1.0).contains(&self.cost_jitter) {
            bail!(Argument, "cost_jitter {} outside [0,1)", self.cost_jitter);
        }
        match self.kind {
            GridKind::HazardGoal => hazard_grid(self, &[1..self.size - 1]),
            GridKind::TwoCost => {
                let n = self.size;
                if n < 4 {
                    bail!(Argument, "two-cost gridworld needs size >= 4, got {n}");
                }
                let mid = 1 + (n - 2) / 2;
                hazard_grid(self, &[1..mid, mid..n - 1])
            }
            GridKind::Trap => trap(self),
        }
    }
}

/// Builds one of the benchmark families with default discount and horizon.
pub fn build_gridworld(kind: &str, size: usize, seed: u64) -> Result<CmdpSpec> {
    GridParams::new(kind.parse()?, size, seed).build()
}

const MOVES: [(i64, i64); 4] = [(0, 1), (0, -1), (-1, 0), (1, 0)];

fn jitter(rng: &mut ChaCha8Rng, amount: f64) -> f64 {
    1.0 + amount * (2.0 * rng.random::<f64>() - 1.0)
}

/// Grid with graded hazard fields over the given column ranges. Field `i` is
/// cost signal `i`; entering cell `(x, y)` of a field costs
/// `(1 − y/(n−1)) / width`, jittered per cell.
fn hazard_grid(params: &GridParams, fields: &[core::ops::Range<usize>]) -> Result<CmdpSpec> {
    let n = params.size;
    let ns = n * n;
    let na = 4;
    let idx = |x: usize, y: usize| y * n + x;
    let start = idx(0, 0);
    let goal = idx(n - 1, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    // hazard[i][cell] = cost of entering the cell for signal i
    let mut hazard = vec![vec![0.0; ns]; fields.len()];
    for (i, cols) in fields.iter().enumerate() {
        let width = cols.len() as f64;
        for x in cols.clone() {
            for y in 0..n - 1 {
                let level = 1.0 - y as f64 / (n - 1) as f64;
                hazard[i][idx(x, y)] = level / width * jitter(&mut rng, params.cost_jitter);
            }
        }
    }

    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    let mut costs = vec![vec![0.0; ns * na]; fields.len()];
    let target = |x: usize, y: usize, m: usize| {
        let (dx, dy) = MOVES[m];
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        if nx < 0 || ny < 0 || nx >= n as i64 || ny >= n as i64 {
            idx(x, y)
        } else {
            idx(nx as usize, ny as usize)
        }
    };
    for y in 0..n {
        for x in 0..n {
            let s = idx(x, y);
            for a in 0..na {
                let row = &mut transition[(s * na + a) * ns..(s * na + a + 1) * ns];
                if s == goal {
                    row[s] = 1.0;
                    continue;
                }
                row[target(x, y, a)] += 1.0 - params.slip;
                for m in 0..na {
                    row[target(x, y, m)] += params.slip / na as f64;
                }
                for (next, &p) in row.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    if next == goal {
                        reward[s * na + a] += p;
                    }
                    for (i, h) in hazard.iter().enumerate() {
                        costs[i][s * na + a] += p * h[next];
                    }
                }
            }
        }
    }
    let mut initial = vec![0.0; ns];
    initial[start] = 1.0;
    CmdpSpec::new(ns, na, transition, reward, costs, initial, params.discount, params.horizon)
}

/// Reward for the near corridor, the far corridor, and the total cost of a
/// straight traversal of the far corridor (spread evenly over its cells).
pub const TRAP_NEAR_REWARD: f64 = 0.3;
pub const TRAP_FAR_REWARD: f64 = 1.0;
pub const TRAP_CORRIDOR_COST: f64 = 1.0;

/// Trap layout; state ids:
/// `0` start, `1` near corridor cell, `2..2+n` far corridor cells, `2+n` the
/// absorbing end state.
///
/// Actions at the start: `0` near, `1` far, `2`/`3` stay. In a corridor cell:
/// `0` forward, `1` back, `2` exit, `3` stay.
fn trap(params: &GridParams) -> Result<CmdpSpec> {
    let n = params.size;
    let ns = n + 3;
    let na = 4;
    let start = 0;
    let near = 1;
    let far = |i: usize| 2 + i;
    let end = n + 2;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let step_cost = TRAP_CORRIDOR_COST / n as f64 * jitter(&mut rng, params.cost_jitter);

    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    let mut cost = vec![0.0; ns * na];
    let mut set = |s: usize, a: usize, next: usize, r: f64| {
        transition[(s * na + a) * ns + next] = 1.0;
        reward[s * na + a] = r;
    };
    set(start, 0, near, 0.0);
    set(start, 1, far(0), 0.0);
    set(start, 2, start, 0.0);
    set(start, 3, start, 0.0);
    set(near, 0, end, TRAP_NEAR_REWARD);
    set(near, 1, start, 0.0);
    set(near, 2, end, 0.0);
    set(near, 3, near, 0.0);
    for i in 0..n {
        let s = far(i);
        if i + 1 == n {
            set(s, 0, end, TRAP_FAR_REWARD);
        } else {
            set(s, 0, far(i + 1), 0.0);
        }
        set(s, 1, if i == 0 { start } else { far(i - 1) }, 0.0);
        set(s, 2, end, 0.0);
        set(s, 3, s, 0.0);
        for a in 0..na {
            cost[s * na + a] = step_cost;
        }
    }
    for a in 0..na {
        set(end, a, end, 0.0);
    }
    let mut initial = vec![0.0; ns];
    initial[start] = 1.0;
    CmdpSpec::new(ns, na, transition, reward, vec![cost], initial, params.discount, params.horizon)
}

/// Human-readable name of a family, used in reports.
pub fn describe(params: &GridParams) -> String {
    alloc::format!("{}-{}-s{}", params.kind.as_str(), params.size, params.seed)
}

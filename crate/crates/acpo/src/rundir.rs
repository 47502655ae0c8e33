//! Run directories: resolved config, per-iteration metrics, budget trace,
//! policy checkpoints and a summary.
//!
//! ```text
//! <out>/config.json             resolved configuration
//! <out>/config_provenance.json  which fields were given and which defaulted
//! <out>/metrics.csv             one row per iteration
//! <out>/budgets.csv             k, stage, d_i..., g
//! <out>/trace.json              full iteration records
//! <out>/policy.json             final policy
//! <out>/checkpoints/policy_<k>.json  the policy that collected iteration k
//! <out>/summary.json            termination and exact returns
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use acpo_core::scheduler::{IterationRecord, RunResult, Termination};
use acpo_core::PolicyParams;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// Headline numbers of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: String,
    pub environment: String,
    pub seed: u64,
    pub termination: Termination,
    pub iterations: usize,
    pub exact_j_reward: f64,
    pub exact_j_cost: Vec<f64>,
    pub d_des: Vec<f64>,
    /// Optimal return under `d_des` from the LP oracle.
    pub lp_j_star: Option<f64>,
    pub wall_ms: u64,
}

/// A run directory read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub config: RunConfig,
    pub records: Vec<IterationRecord>,
    /// `checkpoints[k]` is the policy that collected iteration `k`, when saved.
    pub checkpoints: Vec<Option<PolicyParams>>,
    pub final_policy: PolicyParams,
    pub summary: Summary,
}

impl LoadedRun {
    /// The run as a [`RunResult`] if every per-iteration policy was saved.
    pub fn full_result(&self) -> Option<RunResult> {
        let mut policies: Vec<PolicyParams> = self.checkpoints.iter().cloned().collect::<Option<_>>()?;
        policies.push(self.final_policy.clone());
        Some(RunResult {
            records: self.records.clone(),
            policies,
            final_params: self.final_policy.clone(),
            termination: self.summary.termination,
            final_state: None,
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn checkpoint_path(dir: &Path, k: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("policy_{k:06}.json"))
}

pub fn save_policy(path: &Path, policy: &PolicyParams) -> Result<()> {
    write_json(path, policy)
}

pub fn load_policy(path: &Path) -> Result<PolicyParams> {
    let p: PolicyParams = read_json(path)?;
    p.validate().with_context(|| format!("invalid policy in {}", path.display()))?;
    Ok(p)
}

fn joined(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Header of `metrics.csv` for `m` constraints.
pub fn metrics_header(m: usize) -> Vec<String> {
    let mut h: Vec<String> = ["algorithm", "iter", "stage", "event", "skipped", "j_reward_hat"].map(String::from).into();
    h.extend((0..m).map(|i| format!("j_cost_hat_{i}")));
    h.extend((0..m).map(|i| format!("cost_queue_mean_{i}")));
    h.extend((0..m).map(|i| format!("d_{i}")));
    h.extend(
        [
            "g",
            "active_costs",
            "kl",
            "objective",
            "barrier_arguments",
            "domain_ok",
            "updates",
            "breach_updates",
            "grad_norm",
            "aborted",
            "complete_episodes",
            "multipliers",
            "wall_ms",
        ]
        .map(String::from),
    );
    h
}

fn metrics_row(algorithm: &str, r: &IterationRecord, wall_ms: Option<u64>) -> Vec<String> {
    let mut row = vec![
        algorithm.to_string(),
        r.iter.to_string(),
        r.stage.as_str().to_string(),
        r.event.as_str().to_string(),
        r.skipped.to_string(),
        r.j_reward_hat.to_string(),
    ];
    row.extend(r.j_cost_hat.iter().map(|x| x.to_string()));
    row.extend(r.cost_queue_means.iter().map(|x| x.to_string()));
    row.extend(r.cost_budget.iter().map(|x| x.to_string()));
    row.extend([
        r.reward_budget.to_string(),
        r.active_costs.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";"),
        r.kl.to_string(),
        r.objective.to_string(),
        joined(&r.barrier_arguments),
        r.domain_ok.to_string(),
        r.updates.to_string(),
        r.breach_updates.to_string(),
        r.grad_norm.to_string(),
        r.aborted.to_string(),
        r.complete_episodes.to_string(),
        joined(&r.multipliers),
        wall_ms.map_or_else(String::new, |w| w.to_string()),
    ]);
    row
}

/// Writes `metrics.csv`; `wall_ms[k]` fills the timing column when given.
pub fn write_metrics(path: &Path, algorithm: &str, m: usize, records: &[IterationRecord], wall_ms: Option<&[u64]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(metrics_header(m))?;
    for (k, r) in records.iter().enumerate() {
        if r.cost_queue_means.len() != m && !r.cost_queue_means.is_empty() {
            bail!("record {k} has {} queue means for {m} constraints", r.cost_queue_means.len());
        }
        let mut row = metrics_row(algorithm, r, wall_ms.and_then(|w| w.get(k).copied()));
        if r.cost_queue_means.is_empty() {
            // baselines keep no queues; keep the column count fixed
            let at = 6 + m;
            row.splice(at..at, std::iter::repeat_n(String::new(), m));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `budgets.csv` with columns `k, stage, d_0.., g`.
pub fn write_budgets(path: &Path, m: usize, records: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["k".to_string(), "stage".to_string()];
    header.extend((0..m).map(|i| format!("d_{i}")));
    header.push("g".into());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.iter.to_string(), r.stage.as_str().to_string()];
        row.extend(r.cost_budget.iter().map(|x| x.to_string()));
        row.push(r.reward_budget.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row of `budgets.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetRow {
    pub k: usize,
    pub stage: String,
    pub d: Vec<f64>,
    pub g: f64,
}

pub fn read_budgets(path: &Path) -> Result<Vec<BudgetRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let m = r.headers()?.len().saturating_sub(3);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> { Ok(rec[i].parse()?) };
        out.push(BudgetRow {
            k: rec[0].parse()?,
            stage: rec[1].to_string(),
            d: (0..m).map(|i| num(2 + i)).collect::<Result<_>>()?,
            g: num(2 + m)?,
        });
    }
    Ok(out)
}

/// Writes a complete run directory.
pub fn write_run_dir(
    dir: &Path,
    config: &RunConfig,
    provenance: Option<&std::collections::BTreeMap<String, &'static str>>,
    result: &RunResult,
    summary: &Summary,
    wall_ms: Option<&[u64]>,
) -> Result<()> {
    fs::create_dir_all(dir.join("checkpoints")).with_context(|| format!("creating {}", dir.display()))?;
    let m = config.d_des.len();
    write_json(&dir.join("config.json"), config)?;
    if let Some(p) = provenance {
        write_json(&dir.join("config_provenance.json"), p)?;
    }
    write_metrics(&dir.join("metrics.csv"), config.algorithm.as_str(), m, &result.records, wall_ms)?;
    write_budgets(&dir.join("budgets.csv"), m, &result.records)?;
    write_json(&dir.join("trace.json"), &result.records)?;
    for (k, p) in result.policies.iter().enumerate().take(result.records.len()) {
        if k % config.checkpoint_every == 0 {
            save_policy(&checkpoint_path(dir, k), p)?;
        }
    }
    save_policy(&dir.join("policy.json"), &result.final_params)?;
    write_json(&dir.join("summary.json"), summary)
}

pub fn load_run_dir(dir: &Path) -> Result<LoadedRun> {
    let config: RunConfig = read_json(&dir.join("config.json"))?;
    config.validate()?;
    let records: Vec<IterationRecord> = read_json(&dir.join("trace.json"))?;
    let summary: Summary = read_json(&dir.join("summary.json"))?;
    let final_policy = load_policy(&dir.join("policy.json"))?;
    let checkpoints = (0..records.len())
        .map(|k| {
            let p = checkpoint_path(dir, k);
            if p.exists() { load_policy(&p).map(Some) } else { Ok(None) }
        })
        .collect::<Result<_>>()?;
    Ok(LoadedRun { config, records, checkpoints, final_policy, summary })
}

pub fn write_verdicts<T: Serialize>(dir: &Path, verdicts: &T) -> Result<()> {
    write_json(&dir.join("verdicts.json"), verdicts)
}

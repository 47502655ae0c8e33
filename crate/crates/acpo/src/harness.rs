//! Training runs, evaluation, verification and reports on top of the core.

use std::cell::RefCell;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use acpo_core::baselines::run_baseline;
use acpo_core::estimation::{collect, episode_returns, exact_eval};
use acpo_core::oracle::{check_performance_bound, check_stage_pair_bounds, lp_solve, pareto_front, BoundReport, FrontPoint};
use acpo_core::scheduler::{run_acpo, Collector, RunResult};
use acpo_core::{CmdpSpec, PolicyParams, TrajectoryBatch};
use anyhow::{Context, Result};
use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::collector::ThreadedCollector;
use crate::config::RunConfig;
use crate::plot::{line_chart, Series};
use crate::rundir::{self, LoadedRun, Summary};

/// Wraps a collector and notes the elapsed time at every call.
struct Timed<'a> {
    inner: &'a dyn Collector,
    start: Instant,
    stamps: RefCell<Vec<u64>>,
}

impl Collector for Timed<'_> {
    fn collect(&self, spec: &CmdpSpec, params: &PolicyParams, n: usize, seed: u64) -> acpo_core::Result<TrajectoryBatch> {
        self.stamps.borrow_mut().push(self.start.elapsed().as_millis() as u64);
        self.inner.collect(spec, params, n, seed)
    }
}

/// A finished training run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub spec: CmdpSpec,
    pub result: RunResult,
    /// Milliseconds from the start of the run to the end of each iteration.
    pub wall_ms: Vec<u64>,
}

impl Trained {
    pub fn total_ms(&self) -> u64 {
        self.wall_ms.last().copied().unwrap_or(0)
    }
}

/// Trains the configured algorithm with `workers` collection threads.
pub fn train(cfg: &RunConfig, workers: usize) -> Result<Trained> {
    cfg.validate()?;
    let spec = cfg.build_spec()?;
    let collector = ThreadedCollector::new(workers, cfg.shards);
    let timed = Timed { inner: &collector, start: Instant::now(), stamps: RefCell::new(Vec::new()) };
    let train = cfg.train_config();
    info!(
        "training {} on {}-{} (seed {}), {} iterations x {} transitions",
        cfg.algorithm.as_str(),
        cfg.environment.kind.as_str(),
        cfg.environment.size,
        cfg.seed,
        train.iterations,
        train.batch_size
    );
    let result = match cfg.baseline() {
        None => run_acpo(&spec, &cfg.stage_config(), &train, &timed)?,
        Some(b) => run_baseline(&spec, &b, &train, &timed)?,
    };
    let end = timed.start.elapsed().as_millis() as u64;
    let mut wall_ms: Vec<u64> = timed.stamps.into_inner().into_iter().skip(1).collect();
    wall_ms.push(end);
    wall_ms.truncate(result.records.len());
    for r in &result.records {
        debug!(
            "iter {} {} {} J_R^={:.4} J_C^={:?} d={:?} kl={:.4}",
            r.iter,
            r.stage.as_str(),
            r.event.as_str(),
            r.j_reward_hat,
            r.j_cost_hat,
            r.cost_budget,
            r.kl
        );
    }
    info!("{:?} after {} iterations in {} ms", result.termination, result.records.len(), end);
    Ok(Trained { spec, result, wall_ms })
}

pub fn summarize(cfg: &RunConfig, trained: &Trained) -> Result<Summary> {
    let e = exact_eval(&trained.spec, &trained.result.final_params)?;
    let lp = lp_solve(&trained.spec, &cfg.d_des)?;
    Ok(Summary {
        algorithm: cfg.algorithm.as_str().to_string(),
        environment: acpo_core::gridworld::describe(&cfg.environment),
        seed: cfg.seed,
        termination: trained.result.termination,
        iterations: trained.result.records.len(),
        exact_j_reward: e.j_reward,
        exact_j_cost: e.j_cost,
        d_des: cfg.d_des.clone(),
        lp_j_star: lp.optimal().map(|s| s.j_star),
        wall_ms: trained.total_ms(),
    })
}

/// Trains and writes the run directory `out`.
pub fn run_to_dir(cfg: &RunConfig, provenance: Option<&std::collections::BTreeMap<String, &'static str>>, workers: usize, out: &Path) -> Result<Summary> {
    let trained = train(cfg, workers)?;
    let summary = summarize(cfg, &trained)?;
    let timing = cfg.record_timing.then_some(trained.wall_ms.as_slice());
    rundir::write_run_dir(out, cfg, provenance, &trained.result, &summary, timing)?;
    info!("wrote {}", out.display());
    Ok(summary)
}

/// Exact and sampled returns of one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub exact_j_reward: f64,
    pub exact_j_cost: Vec<f64>,
    pub episodes: usize,
    pub sampled_j_reward: f64,
    pub sampled_j_reward_stderr: f64,
    pub sampled_j_cost: Vec<f64>,
    /// `|exact − sampled|` is at most three standard errors (exact when both agree exactly).
    pub within_three_se: bool,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Exact returns plus the discounted returns of `episodes` sampled episodes.
pub fn evaluate(spec: &CmdpSpec, policy: &PolicyParams, episodes: usize, seed: u64) -> Result<Evaluation> {
    let episodes = episodes.max(1);
    let e = exact_eval(spec, policy)?;
    let batch = collect(spec, policy, episodes * spec.horizon, seed)?;
    let (mut r, c) = episode_returns(&batch, spec.discount);
    r.truncate(episodes);
    let (mean_r, se_r) = mean_stderr(&r);
    let sampled_c = c.iter().map(|ci| mean_stderr(&ci[..episodes.min(ci.len())]).0).collect();
    let within = (e.j_reward - mean_r).abs() <= 3.0 * se_r + 1e-9;
    Ok(Evaluation {
        exact_j_reward: e.j_reward,
        exact_j_cost: e.j_cost,
        episodes: r.len(),
        sampled_j_reward: mean_r,
        sampled_j_reward_stderr: se_r,
        sampled_j_cost: sampled_c,
        within_three_se: within,
    })
}

/// Bound checks available for a saved run: the per-update performance
/// bounds between consecutive saved checkpoints, and the stage-pair bounds
/// when the run is ACPO and every policy was saved.
pub fn verify_run(run: &LoadedRun) -> Result<Vec<BoundReport>> {
    let spec = run.config.build_spec()?;
    let mut out = Vec::new();
    if run.config.baseline().is_none() {
        match run.full_result() {
            Some(full) => out.extend(check_stage_pair_bounds(&spec, &full, &run.config.stage_config())?),
            None => out.push(BoundReport::skipped("stage-pair", "checkpoints were not saved every iteration")),
        }
    }
    let saved: Vec<(usize, &PolicyParams)> =
        run.checkpoints.iter().enumerate().filter_map(|(k, p)| p.as_ref().map(|p| (k, p))).collect();
    for w in saved.windows(2) {
        for mut r in check_performance_bound(&spec, w[0].1, w[1].1)? {
            r.iter = Some(w[1].0);
            out.push(r);
        }
    }
    Ok(out)
}

/// Human-readable table of bound reports.
pub fn verdict_table(reports: &[BoundReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<22} {:>6} {:>14} {:>14} {:>12}  verdict", "check", "iter", "lhs", "rhs", "slack");
    for r in reports {
        let verdict = match (&r.skipped, r.pass) {
            (Some(reason), _) => format!("skipped ({reason})"),
            (None, true) => "pass".into(),
            (None, false) => "FAIL".into(),
        };
        let iter = r.iter.map_or("-".into(), |k| k.to_string());
        let _ = writeln!(s, "{:<22} {:>6} {:>14.6e} {:>14.6e} {:>12.3e}  {verdict}", r.check, iter, r.lhs, r.rhs, r.slack);
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    let _ = writeln!(s, "{} checks, {} failed", reports.len(), failed);
    s
}

/// `J*(d)` over an evenly spaced budget grid.
pub fn front(spec: &CmdpSpec, d_min: f64, d_max: f64, points: usize) -> Result<Vec<FrontPoint>> {
    let n = points.max(2);
    let grid: Vec<f64> = (0..n).map(|i| d_min + (d_max - d_min) * i as f64 / (n - 1) as f64).collect();
    Ok(pareto_front(spec, &grid)?)
}

pub fn write_front_csv(path: &Path, front: &[FrontPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["budget", "j_star", "j_cost"])?;
    for p in front {
        w.write_record([
            p.budget[0].to_string(),
            p.j_star.map_or_else(String::new, |j| j.to_string()),
            p.j_cost.as_ref().map_or_else(String::new, |c| c.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Summary table over several run directories.
pub fn compare(dirs: &[&Path]) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:<20} {:>5} {:>6} {:>10} {:>10} {:>8} {:<24} {:<14}",
        "algo", "environment", "seed", "iters", "J_R", "J*", "J_R/J*", "J_C", "termination"
    );
    for dir in dirs {
        let summary: Summary = serde_json::from_str(
            &fs::read_to_string(dir.join("summary.json")).with_context(|| format!("reading {}", dir.display()))?,
        )?;
        let ratio = summary.lp_j_star.map_or(f64::NAN, |j| summary.exact_j_reward / j);
        let costs = summary.exact_j_cost.iter().map(|c| format!("{c:.4}")).collect::<Vec<_>>().join(",");
        let _ = writeln!(
            s,
            "{:<8} {:<20} {:>5} {:>6} {:>10.4} {:>10.4} {:>8.3} {:<24} {:<14}",
            summary.algorithm,
            summary.environment,
            summary.seed,
            summary.iterations,
            summary.exact_j_reward,
            summary.lp_j_star.unwrap_or(f64::NAN),
            ratio,
            costs,
            format!("{:?}", summary.termination)
        );
    }
    Ok(s)
}

/// Writes `plots/budgets.svg` and `plots/returns.svg` for a run directory.
pub fn plot_run(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let run = rundir::load_run_dir(dir)?;
    let plots = dir.join("plots");
    fs::create_dir_all(&plots)?;
    let m = run.config.d_des.len();
    let k = |r: &acpo_core::scheduler::IterationRecord| r.iter as f64;
    let mut budget: Vec<Series> =
        (0..m).map(|i| Series::new(format!("d_{i}"), run.records.iter().map(|r| (k(r), r.cost_budget[i])).collect())).collect();
    budget.push(Series::new("g", run.records.iter().map(|r| (k(r), r.reward_budget)).collect()));
    let mut returns = vec![Series::new("J_R (sampled)", run.records.iter().map(|r| (k(r), r.j_reward_hat)).collect())];
    returns.extend(
        (0..m).map(|i| Series::new(format!("J_C{i} (sampled)"), run.records.iter().map(|r| (k(r), r.j_cost_hat[i])).collect())),
    );
    let title = format!("{} on {}", run.config.algorithm.as_str(), run.summary.environment);
    let files = [
        (plots.join("budgets.svg"), line_chart(&format!("{title}: budgets"), "iteration", "budget", &budget)),
        (plots.join("returns.svg"), line_chart(&format!("{title}: returns"), "iteration", "return", &returns)),
    ];
    for (path, svg) in &files {
        fs::write(path, svg).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

/// Initializes logging from `ACPO_LOG_LEVEL` (error, warn, info, debug; default warn).
pub fn init_logging() {
    let level = std::env::var("ACPO_LOG_LEVEL").unwrap_or_else(|_| "warn".into());
    let _ = env_logger::Builder::new().parse_filters(&level).format_timestamp(None).try_init();
}

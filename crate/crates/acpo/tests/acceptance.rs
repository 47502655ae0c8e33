//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Training criteria use the default run configuration on the benchmark
//! gridworlds; oracle criteria use random small CMDPs. Run directories are
//! written below the cargo test scratch directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use acpo::rundir::{self, read_budgets};
use acpo::{load_run_dir, run_to_dir, verify_run, Algorithm, RunConfig, Summary};
use acpo_core::estimation::{collect, estimate, ValueTables};
use acpo_core::gridworld::{GridKind, GridParams};
use acpo_core::oracle::random::{random_binding_instance, random_policy, random_spec};
use acpo_core::oracle::{check_ipo_gap, check_performance_bound};
use acpo_core::stage::stage_evaluate;
use acpo_core::{EstimatorConfig, PolicyParams, StageKind, StageObjective, SurrogateScale};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const HAZARD_D: f64 = 0.5;
const TRAP_D: f64 = 1.0;
const TRAP_SIZE: usize = 6;
const HAZARD_SECONDS: f64 = 300.0;
const BOUND_REL_TOL: f64 = 1e-8;
const BOUND_SECONDS: f64 = 60.0;
const GAP_SECONDS: f64 = 120.0;
const GAP_RESOLUTION: usize = 1000;
const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn scratch(name: &str) -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) }
}

fn config(algorithm: Algorithm, kind: GridKind, size: usize, d: f64, seed: u64) -> RunConfig {
    let env = GridParams::new(kind, size, 0);
    let m = if kind == GridKind::TwoCost { 2 } else { 1 };
    let mut cfg = RunConfig::new(algorithm, env, vec![d; m]);
    cfg.seed = seed;
    cfg
}

fn run(cfg: &RunConfig, tag: &str) -> Result<(Summary, f64, PathBuf), String> {
    let dir = scratch(&format!("{tag}-{}-s{}", cfg.algorithm.as_str(), cfg.seed));
    let start = Instant::now();
    let s = run_to_dir(cfg, None, 1, &dir).map_err(|e| format!("{e:#}"))?;
    Ok((s, start.elapsed().as_secs_f64(), dir))
}

fn hazard_goal() -> Result<Outcome, String> {
    let mut ratio = Vec::new();
    let mut dev = Vec::new();
    let mut slowest: f64 = 0.0;
    let mut tol = 0.0;
    for seed in SEEDS {
        let cfg = config(Algorithm::Acpo, GridKind::HazardGoal, 5, HAZARD_D, seed);
        tol = f64::max(0.1 * HAZARD_D, cfg.stage_config().finish_tol);
        let (s, secs, _) = run(&cfg, "hazard")?;
        let j_star = s.lp_j_star.ok_or("desired budget infeasible")?;
        ratio.push(s.exact_j_reward / j_star);
        dev.push((s.exact_j_cost[0] - HAZARD_D).abs());
        slowest = slowest.max(secs);
    }
    let (r, d) = (median(ratio), median(dev));
    Ok(Outcome {
        name: "hazard-goal 5x5 reaches the LP optimum",
        pass: r >= 0.90 && d <= tol && slowest <= HAZARD_SECONDS,
        detail: format!(
            "median J_R/J* = {r:.4} (>= 0.90), median |J_C - d| = {d:.4} (<= {tol}), slowest seed {slowest:.1}s (<= {HAZARD_SECONDS}s)"
        ),
    })
}

struct TrapRuns {
    acpo: Vec<Summary>,
    ipo: Vec<Summary>,
    ipo_c: Vec<Summary>,
    acpo_dir: PathBuf,
    ipo_c_dir: PathBuf,
    delta_d: f64,
}

fn trap_runs() -> Result<TrapRuns, String> {
    let mut out = TrapRuns {
        acpo: Vec::new(),
        ipo: Vec::new(),
        ipo_c: Vec::new(),
        acpo_dir: PathBuf::new(),
        ipo_c_dir: PathBuf::new(),
        delta_d: 0.0,
    };
    for seed in SEEDS {
        for algo in [Algorithm::Acpo, Algorithm::Ipo, Algorithm::IpoC] {
            let cfg = config(algo, GridKind::Trap, TRAP_SIZE, TRAP_D, seed);
            out.delta_d = cfg.stage_config().finish_tol;
            let (s, _, dir) = run(&cfg, "trap")?;
            match algo {
                Algorithm::Acpo => {
                    out.acpo.push(s);
                    out.acpo_dir = dir;
                }
                Algorithm::Ipo => out.ipo.push(s),
                _ => {
                    out.ipo_c.push(s);
                    out.ipo_c_dir = dir;
                }
            }
        }
    }
    Ok(out)
}

fn trap_escape(t: &TrapRuns) -> Outcome {
    let acpo = median(t.acpo.iter().map(|s| s.exact_j_reward).collect());
    let ipo = median(t.ipo.iter().map(|s| s.exact_j_reward).collect());
    let limit = TRAP_D + t.delta_d;
    let feasible = |runs: &[Summary]| median(runs.iter().map(|s| s.exact_j_cost[0]).collect());
    let (ca, ci) = (feasible(&t.acpo), feasible(&t.ipo));
    Outcome {
        name: "trap: adaptive budget beats the fixed budget",
        pass: acpo >= 1.05 * ipo && ca <= limit && ci <= limit,
        detail: format!(
            "median J_R acpo {acpo:.4} vs ipo {ipo:.4} (ratio {:.3} >= 1.05); median J_C acpo {ca:.4}, ipo {ci:.4} (<= {limit})",
            acpo / ipo
        ),
    }
}

fn trap_curriculum(t: &TrapRuns) -> Result<Outcome, String> {
    let acpo = median(t.acpo.iter().map(|s| s.exact_j_reward).collect());
    let ipo_c = median(t.ipo_c.iter().map(|s| s.exact_j_reward).collect());
    let trace = |dir: &Path| -> Result<Vec<f64>, String> {
        Ok(read_budgets(&dir.join("budgets.csv")).map_err(|e| format!("{e:#}"))?.iter().map(|r| r.d[0]).collect())
    };
    let (a, c) = (trace(&t.acpo_dir)?, trace(&t.ipo_c_dir)?);
    let rises = a.windows(2).any(|w| w[1] > w[0]);
    let falls = a.windows(2).any(|w| w[1] < w[0]);
    let monotone = c.windows(2).all(|w| w[1] <= w[0]);
    Ok(Outcome {
        name: "trap: adaptive budget vs curriculum",
        pass: acpo >= ipo_c && rises && falls && monotone,
        detail: format!(
            "median J_R acpo {acpo:.4} >= ipo-c {ipo_c:.4}; acpo budget rises {rises} and falls {falls}; ipo-c budget non-increasing {monotone}"
        ),
    })
}

fn performance_bounds() -> Result<Outcome, String> {
    let start = Instant::now();
    let mut pairs = 0;
    let mut worst = f64::INFINITY;
    let mut failures = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let ns = rng.random_range(2..=8);
        let na = rng.random_range(2..=4);
        let m = rng.random_range(1..=2);
        let spec = random_spec(&mut rng, ns, na, m, 0.9).map_err(|e| e.to_string())?;
        for _ in 0..25 {
            let old = random_policy(&mut rng, ns, na, 2.0);
            let new = random_policy(&mut rng, ns, na, 2.0);
            pairs += 1;
            for r in check_performance_bound(&spec, &old, &new).map_err(|e| e.to_string())? {
                let rel = r.slack / (1.0 + r.rhs.abs());
                worst = worst.min(rel);
                if rel < -BOUND_REL_TOL {
                    failures += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(Outcome {
        name: "performance-difference bounds on random CMDPs",
        pass: pairs == 500 && failures == 0 && secs <= BOUND_SECONDS,
        detail: format!("{pairs} pairs, {failures} failures, worst slack/(1+|rhs|) = {worst:.3e}, {secs:.2}s"),
    })
}

fn stage_pair_bounds() -> Result<Outcome, String> {
    let mut cfg = config(Algorithm::Acpo, GridKind::Trap, TRAP_SIZE, TRAP_D, 2);
    cfg.checkpoint_every = 1;
    let (_, _, dir) = run(&cfg, "checkpointed")?;
    let loaded = load_run_dir(&dir).map_err(|e| format!("{e:#}"))?;
    let reports = verify_run(&loaded).map_err(|e| format!("{e:#}"))?;
    rundir::write_verdicts(&dir, &reports).map_err(|e| format!("{e:#}"))?;
    let pairs: Vec<_> = reports.iter().filter(|r| r.check.starts_with("stage-pair")).collect();
    let checked = pairs.iter().filter(|r| r.skipped.is_none()).count();
    let failed = pairs.iter().filter(|r| !r.pass).count();
    Ok(Outcome {
        name: "stage-pair bounds on a checkpointed run",
        pass: checked > 0 && failed == 0,
        detail: format!("{checked} stage-pair reports evaluated, {failed} failed"),
    })
}

fn barrier_gap() -> Result<Outcome, String> {
    let start = Instant::now();
    let ts = [10.0, 25.0, 50.0];
    let mut envelope = [f64::NEG_INFINITY; 3];
    let mut tau: f64 = 0.0;
    let mut evaluated = 0;
    let mut failures = 0;
    for (j, &t) in ts.iter().enumerate() {
        for seed in 0..20 {
            let (spec, pi, d) = random_binding_instance(seed, 0.9).map_err(|e| e.to_string())?;
            let r = check_ipo_gap(&spec, &pi, d, t, GAP_RESOLUTION).map_err(|e| e.to_string())?;
            if r.skipped.is_some() {
                continue;
            }
            evaluated += 1;
            failures += usize::from(!r.pass);
            envelope[j] = envelope[j].max(r.gap);
            tau = tau.max(r.tau_grid);
        }
    }
    // envelopes sit at 1/t, so halving is checked to within the grid tolerance
    let halves = (0..2).all(|j| envelope[j + 1] <= envelope[j] / 2.0 + tau);
    let secs = start.elapsed().as_secs_f64();
    Ok(Outcome {
        name: "barrier optimality gap within 1/t",
        pass: evaluated > 0 && failures == 0 && halves && secs <= GAP_SECONDS,
        detail: format!(
            "{evaluated} instances checked, {failures} outside [-tau, 1/t + tau]; max gap at t=10,25,50: {:.5}, {:.5}, {:.5} (tau {tau:.1e}); {secs:.1}s",
            envelope[0], envelope[1], envelope[2]
        ),
    })
}

fn two_cost() -> Result<Outcome, String> {
    let mut worst: f64 = 0.0;
    let mut finished = 0;
    let mut skipped_ok = true;
    let mut skips = 0;
    let mut delta_d = 0.0;
    for seed in SEEDS {
        let cfg = config(Algorithm::Acpo, GridKind::TwoCost, 5, HAZARD_D, seed);
        delta_d = cfg.stage_config().finish_tol;
        let (s, _, dir) = run(&cfg, "two-cost")?;
        finished += usize::from(matches!(s.termination, acpo_core::scheduler::Termination::Finished));
        let mut rows = csv::Reader::from_path(dir.join("metrics.csv")).map_err(|e| e.to_string())?;
        let header = rows.headers().map_err(|e| e.to_string())?.clone();
        let col = |name: &str| header.iter().position(|h| h == name).expect("metrics column");
        let (stage, event, skipped) = (col("stage"), col("event"), col("skipped"));
        let means = [col("cost_queue_mean_0"), col("cost_queue_mean_1")];
        let rows: Vec<csv::StringRecord> = rows.records().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        let last = rows.last().ok_or("empty metrics")?;
        for &c in &means {
            let m: f64 = last[c].parse().map_err(|_| "bad queue mean")?;
            worst = worst.max((m - HAZARD_D).abs());
        }
        for r in &rows {
            if &r[stage] != "min-cost" || &r[event] == "finish" {
                continue;
            }
            let satisfied = means.iter().all(|&c| r[c].parse::<f64>().is_ok_and(|m| m <= HAZARD_D));
            let was_skipped = &r[skipped] == "true";
            skips += usize::from(was_skipped);
            skipped_ok &= satisfied == was_skipped;
        }
    }
    Ok(Outcome {
        name: "two-cost termination and min-cost skipping",
        pass: finished == SEEDS.len() && worst <= delta_d && skipped_ok && skips > 0,
        detail: format!(
            "{finished}/{} finished; worst final |mean(D_C_i) - d_i| = {worst:.4} (<= {delta_d}); \
             {skips} min-cost iterations skipped, skip iff both satisfied: {skipped_ok}",
            SEEDS.len()
        ),
    })
}

fn gradient_check() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut kinds = [0usize; 3];
    for trial in 0..100 {
        let ns = rng.random_range(2..=5);
        let na = rng.random_range(2..=4);
        let m = rng.random_range(1..=2);
        let spec = random_spec(&mut rng, ns, na, m, 0.95).map_err(|e| e.to_string())?;
        let sampler = random_policy(&mut rng, ns, na, 1.0);
        let batch = collect(&spec, &sampler, 300, rng.random()).map_err(|e| e.to_string())?;
        let est = estimate(&batch, &ValueTables::zeros(ns, m), &EstimatorConfig::new(spec.discount), &spec.initial_dist)
            .map_err(|e| e.to_string())?;
        let mut params = sampler.clone();
        for w in params.weights.iter_mut() {
            *w += 0.3 * (2.0 * rng.random::<f64>() - 1.0);
        }
        let kind = [StageKind::MaxReward, StageKind::MinCost, StageKind::Projection][trial % 3];
        kinds[trial % 3] += 1;
        let mut obj = StageObjective::new(kind, vec![0.0; m], spec.discount);
        if rng.random::<bool>() {
            obj.surrogate_scale = SurrogateScale::HorizonMean;
        }
        let frozen = (kind == StageKind::Projection).then_some(&sampler);
        if kind == StageKind::MinCost {
            obj.active_costs = (0..m).filter(|_| rng.random::<bool>()).collect();
            if obj.active_costs.is_empty() {
                obj.active_costs.push(0);
            }
        }
        // place every barrier argument strictly inside its domain
        let probe = stage_evaluate(&batch, &est, &params, &obj, frozen).map_err(|e| e.to_string())?;
        let args = probe.value.barrier_arguments;
        if kind == StageKind::MinCost {
            obj.reward_budget = -args[0] - (0.05 + rng.random::<f64>());
        } else {
            obj.cost_budget = args.iter().map(|&x| x + 0.05 + rng.random::<f64>()).collect();
        }
        let at = |p: &PolicyParams| stage_evaluate(&batch, &est, p, &obj, frozen).map_err(|e| e.to_string());
        let analytic = at(&params)?;
        if !analytic.value.domain_ok {
            return Err(format!("trial {trial}: barrier argument outside the domain"));
        }
        let mut fd = vec![0.0; params.weights.len()];
        for (j, g) in fd.iter_mut().enumerate() {
            let mut hi = params.clone();
            let mut lo = params.clone();
            hi.weights[j] += FD_STEP;
            lo.weights[j] -= FD_STEP;
            *g = (at(&hi)?.value.objective - at(&lo)?.value.objective) / (2.0 * FD_STEP);
        }
        let scale = fd.iter().fold(0.0f64, |a, g| a.max(g.abs())).max(1e-6);
        let err = analytic.grad.iter().zip(&fd).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        worst = worst.max(err / scale);
    }
    Ok(Outcome {
        name: "analytic stage gradients match finite differences",
        pass: worst <= FD_REL_TOL,
        detail: format!(
            "100 triples (max-reward {}, min-cost {}, projection {}), max relative error {worst:.2e} (<= {FD_REL_TOL:.0e})",
            kinds[0], kinds[1], kinds[2]
        ),
    })
}

fn determinism() -> Result<Outcome, String> {
    let cfg = config(Algorithm::Acpo, GridKind::Trap, TRAP_SIZE, TRAP_D, 7);
    let mut files = Vec::new();
    for copy in 0..2 {
        let dir = scratch(&format!("determinism-{copy}"));
        run_to_dir(&cfg, None, 1, &dir).map_err(|e| format!("{e:#}"))?;
        files.push(std::fs::read(dir.join("metrics.csv")).map_err(|e| e.to_string())?);
    }
    Ok(Outcome {
        name: "identical config and seed give identical metrics",
        pass: !files[0].is_empty() && files[0] == files[1],
        detail: format!("two runs with workers=1, metrics.csv of {} bytes, byte-identical: {}", files[0].len(), files[0] == files[1]),
    })
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut outcomes: Vec<Outcome> = Vec::new();
    let mut push = |label: &'static str, r: Result<Outcome, String>| {
        outcomes.push(r.unwrap_or_else(|e| Outcome { name: label, pass: false, detail: format!("error: {e}") }));
    };
    push("hazard-goal 5x5 reaches the LP optimum", hazard_goal());
    match trap_runs() {
        Ok(t) => {
            push("trap: adaptive budget beats the fixed budget", Ok(trap_escape(&t)));
            push("trap: adaptive budget vs curriculum", trap_curriculum(&t));
        }
        Err(e) => {
            push("trap: adaptive budget beats the fixed budget", Err(e.clone()));
            push("trap: adaptive budget vs curriculum", Err(e));
        }
    }
    push("performance-difference bounds on random CMDPs", performance_bounds());
    push("stage-pair bounds on a checkpointed run", stage_pair_bounds());
    push("barrier optimality gap within 1/t", barrier_gap());
    push("two-cost termination and min-cost skipping", two_cost());
    push("analytic stage gradients match finite differences", gradient_check());
    push("identical config and seed give identical metrics", determinism());

    for (i, o) in outcomes.iter().enumerate() {
        println!("{} [{}] {}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.name, o.detail);
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("acceptance: {} of {} criteria passed in {:.0}s", outcomes.len() - failed, outcomes.len(), start.elapsed().as_secs_f64());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}

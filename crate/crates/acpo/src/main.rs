use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acpo::harness::{self, compare, front, plot_run, verdict_table, verify_run, write_front_csv};
use acpo::rundir::{self, load_run_dir};
use acpo::RunConfig;
use acpo_core::gridworld::{GridKind, GridParams};
use acpo_core::oracle::random::random_binding_instance;
use acpo_core::oracle::{check_ipo_gap, BoundReport};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "acpo", version, about = "Adversarial constrained policy optimization on finite CMDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    /// Per-update performance bounds and stage-pair bounds of a saved run.
    Bounds,
    /// Barrier-versus-constrained gap on random two-state instances.
    IpoGap,
}

#[derive(Subcommand)]
enum Command {
    /// Train per a JSON run configuration and write a run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the configured one, else runs/<algo>-<env>-<seed>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Collection threads (results do not depend on this).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Exact and sampled returns of a saved policy.
    Evaluate {
        /// Run directory holding config.json.
        #[arg(long)]
        run: PathBuf,
        /// Policy file; defaults to the run's policy.json.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Numerical checks of the performance bounds; exit status 1 on any failure.
    Verify {
        #[arg(long, value_enum, default_value_t = Suite::Bounds)]
        suite: Suite,
        /// Run directory (bounds suite).
        #[arg(long)]
        run: Option<PathBuf>,
        /// Where to write verdicts.json; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Barrier parameters (ipo-gap suite).
        #[arg(long, value_delimiter = ',', default_values_t = [10.0, 25.0, 50.0])]
        t: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        instances: u64,
        #[arg(long, default_value_t = 1000)]
        resolution: usize,
    },
    /// LP-optimal return over a grid of budgets.
    Front {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 5)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        d_min: f64,
        #[arg(long, default_value_t = 2.0)]
        d_max: f64,
        #[arg(long, default_value_t = 21)]
        points: usize,
        /// CSV output; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summary table over run directories.
    Compare { runs: Vec<PathBuf> },
    /// SVG charts of budget and return traces.
    Plot { run: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    HazardGoal,
    Trap,
    TwoCost,
}

impl From<Kind> for GridKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::HazardGoal => GridKind::HazardGoal,
            Kind::Trap => GridKind::Trap,
            Kind::TwoCost => GridKind::TwoCost,
        }
    }
}

fn default_out(cfg: &RunConfig) -> PathBuf {
    match &cfg.output_dir {
        Some(d) => PathBuf::from(d),
        None => Path::new("runs").join(format!(
            "{}-{}-{}",
            cfg.algorithm.as_str(),
            acpo_core::gridworld::describe(&cfg.environment),
            cfg.seed
        )),
    }
}

fn report_verdicts(reports: &[BoundReport], dir: &Path) -> Result<bool> {
    print!("{}", verdict_table(reports));
    std::fs::create_dir_all(dir)?;
    rundir::write_verdicts(dir, &reports)?;
    Ok(reports.iter().all(|r| r.pass))
}

fn ipo_gap_suite(t_values: &[f64], instances: u64, resolution: usize) -> Result<Vec<BoundReport>> {
    let mut out = Vec::new();
    for &t in t_values {
        for seed in 0..instances {
            let (spec, pi, d) = random_binding_instance(seed, 0.9)?;
            let r = check_ipo_gap(&spec, &pi, d, t, resolution)?;
            for mut b in r.bound_reports() {
                b.iter = Some(seed as usize);
                out.push(b.with_detail("t", t));
            }
        }
    }
    Ok(out)
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, seed, out, workers } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let mut cfg = RunConfig::from_json(&text).with_context(|| format!("in {}", config.display()))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            cfg.validate()?;
            let provenance = cfg.provenance(&text)?;
            let out = out.unwrap_or_else(|| default_out(&cfg));
            let s = acpo::run_to_dir(&cfg, Some(&provenance), cfg.workers, &out)?;
            println!(
                "{} {:?} after {} iterations: J_R = {:.4} (J* = {}), J_C = {:?}",
                s.algorithm,
                s.termination,
                s.iterations,
                s.exact_j_reward,
                s.lp_j_star.map_or("n/a".into(), |j| format!("{j:.4}")),
                s.exact_j_cost
            );
            println!("run directory: {}", out.display());
            Ok(true)
        }
        Command::Evaluate { run, checkpoint, episodes, seed } => {
            let cfg: RunConfig = RunConfig::load(&run.join("config.json"))?;
            let spec = cfg.build_spec()?;
            let policy = rundir::load_policy(&checkpoint.unwrap_or_else(|| run.join("policy.json")))?;
            let e = harness::evaluate(&spec, &policy, episodes, seed)?;
            println!("{}", serde_json::to_string_pretty(&e)?);
            Ok(true)
        }
        Command::Verify { suite, run, out, t, instances, resolution } => match suite {
            Suite::Bounds => {
                let Some(run) = run else { bail!("--run is required for the bounds suite") };
                let loaded = load_run_dir(&run)?;
                let reports = verify_run(&loaded)?;
                report_verdicts(&reports, &out.unwrap_or(run))
            }
            Suite::IpoGap => {
                let reports = ipo_gap_suite(&t, instances, resolution)?;
                report_verdicts(&reports, &out.unwrap_or_else(|| PathBuf::from(".")))
            }
        },
        Command::Front { kind, size, seed, d_min, d_max, points, out } => {
            let spec = GridParams::new(kind.into(), size, seed).build()?;
            let pts = front(&spec, d_min, d_max, points)?;
            match out {
                Some(p) => write_front_csv(&p, &pts)?,
                None => {
                    for p in &pts {
                        println!("{:.4} {}", p.budget[0], p.j_star.map_or("infeasible".into(), |j| format!("{j:.6}")));
                    }
                }
            }
            Ok(true)
        }
        Command::Compare { runs } => {
            let dirs: Vec<&Path> = runs.iter().map(|p| p.as_path()).collect();
            print!("{}", compare(&dirs)?);
            Ok(true)
        }
        Command::Plot { run } => {
            for p in plot_run(&run)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    harness::init_logging();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

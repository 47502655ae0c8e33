//! Run configuration: one strict JSON document per run.

use std::collections::BTreeMap;
use std::path::Path;

use acpo_core::baselines::{Baseline, BarrierConfig, CurriculumSchedule, CurriculumShape};
use acpo_core::gridworld::GridParams;
use acpo_core::scheduler::{StageConfig, TrainConfig};
use acpo_core::stage::OptimizerConfig;
use acpo_core::{CmdpSpec, EstimatorConfig, SurrogateScale};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Acpo,
    Ipo,
    IpoC,
    PpoLag,
    Crpo,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Acpo => "acpo",
            Algorithm::Ipo => "ipo",
            Algorithm::IpoC => "ipo-c",
            Algorithm::PpoLag => "ppo-lag",
            Algorithm::Crpo => "crpo",
        }
    }
}

/// Budget-scheduler knobs; unset fields take the scheduler defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSettings {
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub n_e: Option<usize>,
    pub k_p: Option<f64>,
    pub enlarge_gain: Option<f64>,
    pub finish_tol: Option<f64>,
    pub converge_window: Option<usize>,
    pub converge_rel_tol: Option<f64>,
    pub trust_region: Option<f64>,
    pub reset_after_projection: Option<bool>,
}

/// Estimator knobs; the discount always comes from the environment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSettings {
    pub gae_lambda_reward: Option<f64>,
    pub gae_lambda_cost: Option<f64>,
    pub value_fit_epochs: Option<usize>,
    pub value_learning_rate: Option<f64>,
    pub bootstrap_truncated: Option<bool>,
}

/// Settings that only some baselines read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSettings {
    /// IPO-C: iterations over which the budget decays from `d0` to `d_des`.
    pub curriculum_iters: Option<usize>,
    pub curriculum_shape: CurriculumShape,
    pub lagrange_init: f64,
    pub lagrange_lr: f64,
    pub lagrange_upper_bound: f64,
    pub crpo_tol: f64,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            curriculum_iters: None,
            curriculum_shape: CurriculumShape::Linear,
            lagrange_init: 0.0,
            lagrange_lr: 0.035,
            lagrange_upper_bound: 1000.0,
            crpo_tol: 0.0,
        }
    }
}

fn default_iterations() -> usize {
    1000
}

fn default_batch() -> usize {
    10_000
}

fn default_checkpoint_every() -> usize {
    10
}

fn default_shards() -> usize {
    8
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub environment: GridParams,
    /// Desired cost return per constraint.
    pub d_des: Vec<f64>,
    /// Initial budget; defaults to four times `d_des`.
    #[serde(default)]
    pub d0: Option<Vec<f64>>,
    #[serde(default = "default_iterations")]
    pub num_iterations: usize,
    /// Transitions collected per iteration.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Save the policy every this many iterations (1 keeps every policy).
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    /// Seeded collection shards; results do not depend on the worker count.
    #[serde(default = "default_shards")]
    pub shards: usize,
    /// Collection threads; the command line may override it.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Fill the `wall_ms` metrics column. Off by default so that metrics
    /// files of identical runs are byte-identical.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub schedule: ScheduleSettings,
    #[serde(default)]
    pub barrier: BarrierConfig,
    #[serde(default)]
    pub estimator: EstimatorSettings,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub baseline: BaselineSettings,
}

impl RunConfig {
    /// A configuration with every optional field at its default.
    pub fn new(algorithm: Algorithm, environment: GridParams, d_des: Vec<f64>) -> Self {
        Self {
            algorithm,
            environment,
            d_des,
            d0: None,
            num_iterations: default_iterations(),
            batch_size: default_batch(),
            checkpoint_every: default_checkpoint_every(),
            shards: default_shards(),
            workers: default_workers(),
            record_timing: false,
            seed: 0,
            output_dir: None,
            schedule: ScheduleSettings::default(),
            barrier: BarrierConfig::default(),
            estimator: EstimatorSettings::default(),
            optimizer: OptimizerConfig::default(),
            baseline: BaselineSettings::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("invalid run configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Which resolved fields were given in `text` and which took defaults,
    /// as dotted paths mapped to `"config"` or `"default"`.
    pub fn provenance(&self, text: &str) -> Result<BTreeMap<String, &'static str>> {
        let given: Value = serde_json::from_str(text)?;
        let resolved = serde_json::to_value(self)?;
        let mut out = BTreeMap::new();
        walk(&resolved, Some(&given), String::new(), &mut out);
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_des.is_empty() {
            bail!("d_des must name at least one constraint");
        }
        if self.checkpoint_every == 0 || self.shards == 0 || self.workers == 0 {
            bail!("checkpoint_every, shards and workers must be at least 1");
        }
        if self.d0.as_ref().is_some_and(|d| d.len() != self.d_des.len()) {
            bail!("d0 and d_des differ in length");
        }
        self.stage_config().validate()?;
        self.train_config().validate()?;
        if let Some(b) = self.baseline() {
            if let Baseline::IpoC { schedule, .. } = &b {
                schedule.validate()?;
            }
        }
        Ok(())
    }

    pub fn build_spec(&self) -> Result<CmdpSpec> {
        let spec = self.environment.build()?;
        if spec.num_costs() != self.d_des.len() {
            bail!("{} has {} cost signals but d_des has {}", self.environment.kind.as_str(), spec.num_costs(), self.d_des.len());
        }
        Ok(spec)
    }

    pub fn initial_budget(&self) -> Vec<f64> {
        self.d0.clone().unwrap_or_else(|| self.d_des.iter().map(|d| 4.0 * d).collect())
    }

    pub fn stage_config(&self) -> StageConfig {
        let mut c = StageConfig::new(self.initial_budget(), self.d_des.clone());
        let s = &self.schedule;
        c.n1 = s.n1.unwrap_or(c.n1);
        c.n2 = s.n2.unwrap_or(c.n2);
        c.n_e = s.n_e.unwrap_or(c.n_e);
        c.k_p = s.k_p.unwrap_or(c.k_p);
        c.enlarge_gain = s.enlarge_gain.or(c.enlarge_gain);
        c.finish_tol = s.finish_tol.unwrap_or(c.finish_tol);
        c.converge_window = s.converge_window.unwrap_or(c.converge_window);
        c.converge_rel_tol = s.converge_rel_tol.unwrap_or(c.converge_rel_tol);
        c.trust_region = s.trust_region.unwrap_or(c.trust_region);
        c.reset_after_projection = s.reset_after_projection.unwrap_or(c.reset_after_projection);
        c.barrier_t = self.barrier.barrier_t;
        c.barrier_cap = self.barrier.barrier_cap;
        c.clip_ratio = self.barrier.clip_ratio;
        c.surrogate_scale = self.barrier.surrogate_scale;
        c
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        let mut e = EstimatorConfig::new(self.environment.discount);
        let s = &self.estimator;
        e.gae_lambda_reward = s.gae_lambda_reward.unwrap_or(e.gae_lambda_reward);
        e.gae_lambda_cost = s.gae_lambda_cost.unwrap_or(e.gae_lambda_cost);
        e.value_fit_epochs = s.value_fit_epochs.unwrap_or(e.value_fit_epochs);
        e.value_learning_rate = s.value_learning_rate.unwrap_or(e.value_learning_rate);
        e.bootstrap_truncated = s.bootstrap_truncated.unwrap_or(e.bootstrap_truncated);
        e
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.num_iterations,
            batch_size: self.batch_size,
            estimator: self.estimator_config(),
            optimizer: self.optimizer,
            seed: self.seed,
        }
    }

    /// The baseline to train, or `None` for ACPO.
    pub fn baseline(&self) -> Option<Baseline> {
        let b = &self.baseline;
        let barrier = self.barrier;
        Some(match self.algorithm {
            Algorithm::Acpo => return None,
            Algorithm::Ipo => Baseline::Ipo { d_fixed: self.d_des.clone(), barrier },
            Algorithm::IpoC => Baseline::IpoC {
                schedule: CurriculumSchedule {
                    d_init: self.initial_budget(),
                    d_final: self.d_des.clone(),
                    decay_iters: b.curriculum_iters.unwrap_or((self.num_iterations / 2).max(1)),
                    shape: b.curriculum_shape,
                },
                barrier,
            },
            Algorithm::PpoLag => Baseline::PpoLag {
                d_des: self.d_des.clone(),
                init: b.lagrange_init,
                lr: b.lagrange_lr,
                upper_bound: b.lagrange_upper_bound,
                clip_ratio: barrier.clip_ratio,
            },
            Algorithm::Crpo => Baseline::Crpo { d_des: self.d_des.clone(), tol_eta: b.crpo_tol, clip_ratio: barrier.clip_ratio },
        })
    }

    /// The surrogate scale in use, for reports.
    pub fn surrogate_scale(&self) -> SurrogateScale {
        self.barrier.surrogate_scale
    }
}

fn walk(resolved: &Value, given: Option<&Value>, path: String, out: &mut BTreeMap<String, &'static str>) {
    match resolved {
        Value::Object(map) if !map.is_empty() => {
            for (k, v) in map {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                walk(v, given.and_then(|g| g.get(k)), sub, out);
            }
        }
        _ => {
            out.insert(path, if given.is_some() { "config" } else { "default" });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use acpo_core::gridworld::GridKind;

    #[test]
    fn minimal_json_takes_defaults() {
        let cfg = RunConfig::from_json(
            r#"{"algorithm": "acpo", "environment": {"kind": "trap", "size": 6, "seed": 0}, "d_des": [1.0]}"#,
        )
        .unwrap();
        assert_eq!(cfg, RunConfig::new(Algorithm::Acpo, GridParams::new(GridKind::Trap, 6, 0), vec![1.0]));
        assert_eq!(cfg.initial_budget(), vec![4.0]);
        assert_eq!(cfg.stage_config().finish_tol, 0.05);
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = RunConfig::from_json(
            r#"{"algorithm": "acpo", "environment": {"kind": "trap", "size": 6, "seed": 0}, "d_des": [1.0], "lr": 1}"#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn invalid_budget_rejected() {
        let mut cfg = RunConfig::new(Algorithm::Acpo, GridParams::new(GridKind::Trap, 6, 0), vec![1.0]);
        cfg.d0 = Some(vec![0.5]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn provenance_marks_defaults() {
        let text = r#"{"algorithm": "acpo", "environment": {"kind": "trap", "size": 6, "seed": 0}, "d_des": [1.0],
                      "optimizer": {"learning_rate": 0.02}}"#;
        let cfg = RunConfig::from_json(text).unwrap();
        let p = cfg.provenance(text).unwrap();
        assert_eq!(p["environment.kind"], "config");
        assert_eq!(p["environment.discount"], "default");
        assert_eq!(p["optimizer.learning_rate"], "config");
        assert_eq!(p["optimizer.epochs"], "default");
        assert_eq!(p["batch_size"], "default");
    }

    #[test]
    fn clip_ratio_out_of_range() {
        let text = r#"{"algorithm": "ipo", "environment": {"kind": "trap", "size": 6, "seed": 0}, "d_des": [1.0],
                      "barrier": {"clip_ratio": 1.5}}"#;
        assert!(RunConfig::from_json(text).is_err());
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::new(Algorithm::IpoC, GridParams::new(GridKind::TwoCost, 5, 3), vec![0.5, 0.5]);
        cfg.schedule.k_p = Some(0.5);
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }
}

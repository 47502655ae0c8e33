//! Adversarial constrained policy optimization (ACPO) on finite CMDPs.
//!
//! The crate is `no_std` with `alloc`. It contains everything that is pure
//! computation: CMDP definitions and benchmark gridworlds, softmax policies
//! with analytic gradients, rollout collection and advantage estimation,
//! the interior-point stage objectives, the ACPO budget scheduler, the
//! fixed-budget and curriculum baselines, and an exact occupancy-measure
//! LP oracle with numerical checks of the performance bounds.
//!
//! IO, configuration files and the command line live in the `acpo` crate.

#![no_std]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

pub mod baselines;
pub mod cmdp;
pub mod error;
pub mod estimation;
pub mod gridworld;
pub mod math;
pub mod oracle;
pub mod policy;
pub mod scheduler;
pub mod stage;

pub use cmdp::{shape_cost, CmdpSpec, CostShapingSpec, EnvState, StepOutcome};
pub use error::{Error, Result};
pub use estimation::{EstimateSet, EstimatorConfig, ExactEval, TrajectoryBatch};
pub use policy::{PolicyDist, PolicyParams};
pub use scheduler::{BudgetState, RunResult, StageConfig, StageFlag};
pub use stage::{StageKind, StageObjective, SurrogateScale, SurrogateValue};

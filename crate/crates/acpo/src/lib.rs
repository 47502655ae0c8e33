//! Runs, configuration files, run directories and reports for `acpo-core`.
//!
//! The `acpo` binary exposes the same functionality on the command line.

pub mod collector;
pub mod config;
pub mod harness;
pub mod plot;
pub mod rundir;

pub use collector::ThreadedCollector;
pub use config::{Algorithm, RunConfig};
pub use harness::{evaluate, run_to_dir, summarize, train, verify_run, Evaluation, Trained};
pub use rundir::{load_run_dir, LoadedRun, Summary};

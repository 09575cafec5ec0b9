//! Experiment runner for the zocubic toolkit: recovery benchmarks, seeded optimizer
//! runs and budget-matched comparisons, all emitted as CSV.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod error;
pub mod output;
pub mod problem;
pub mod runs;

use std::path::Path;

pub use config::{parse_config, parse_config_str, Experiment, RunConfig};
pub use error::{HarnessError, Result};

/// Runs the configured experiment and writes its CSV files into `out`.
pub fn run_experiment(cfg: &RunConfig, out: &Path) -> Result<()> {
    match cfg.experiment {
        Experiment::RecoverBench => {
            let report = bench::run_recover_bench(cfg)?;
            bench::write_recover_bench(&report, out)
        }
        Experiment::Optimize => {
            let p = problem::build_problem(cfg.problem_spec()?)?;
            let runs = runs::run_optimize(cfg, p.as_ref())?;
            runs::write_optimize(&runs, p.as_ref(), out)
        }
        Experiment::Compare => {
            let p = problem::build_problem(cfg.problem_spec()?)?;
            let report = runs::run_compare(cfg, p.as_ref())?;
            runs::write_compare(&report, p.as_ref(), out)
        }
    }
}

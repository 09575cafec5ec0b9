use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zocubic::MeasurementScheme;
use zocubic_harness::config::parse_seeds;
use zocubic_harness::{parse_config, run_experiment, Experiment, HarnessError};

/// Zeroth-order cubic Newton experiments. Set RUST_LOG (e.g. `info`) for progress logs.
#[derive(Debug, Parser)]
#[command(name = "zocubic", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Recovery success rates over an (n, r, M, scheme) grid.
    RecoverBench(Args),
    /// Seeded cubic Newton runs.
    Optimize(Args),
    /// Cubic Newton against ZO-SGD at shared evaluation budgets.
    Compare(Args),
}

#[derive(Debug, clap::Args)]
struct Args {
    /// Run configuration (flat `key = value` file).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Half-open seed range `a..b`; overrides the config's `seeds`.
    #[arg(long, value_parser = seed_list)]
    seeds: Option<SeedList>,
    /// Measurement scheme for Hessian probes.
    #[arg(long)]
    scheme: Option<MeasurementScheme>,
}

#[derive(Debug, Clone)]
struct SeedList(Vec<u64>);

fn seed_list(s: &str) -> Result<SeedList, String> {
    parse_seeds(s).map(SeedList)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let (expected, args) = match cli.command {
        Command::RecoverBench(a) => (Experiment::RecoverBench, a),
        Command::Optimize(a) => (Experiment::Optimize, a),
        Command::Compare(a) => (Experiment::Compare, a),
    };
    let mut cfg = parse_config(&args.config)?;
    if cfg.experiment != expected {
        return Err(HarnessError::Config(format!(
            "{} declares experiment = {}, but the `{}` subcommand was invoked",
            args.config.display(),
            cfg.experiment.name(),
            expected.name()
        )));
    }
    if let Some(SeedList(seeds)) = args.seeds {
        cfg.seeds = seeds;
    }
    if let Some(scheme) = args.scheme {
        cfg.set_scheme(scheme);
    }
    let out = args
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(expected.name()));
    run_experiment(&cfg, &out)?;
    log::info!("results in {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

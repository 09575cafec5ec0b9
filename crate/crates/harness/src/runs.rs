//! Optimizer experiments: seeded cubic Newton runs, and budget-matched comparisons
//! against ZO-SGD with summaries at shared evaluation checkpoints.

use std::path::Path;

use rayon::prelude::*;
use zocubic::{
    cubic_newton_run, full_objective, stationarity_report, theoretical_params, zo_sgd_run,
    CubicNewtonConfig, EvalCounter, FiniteSumProblem, RunTrace, TheoryInputs, ZoSgdConfig,
};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::output::{fmt_f64, fmt_opt, write_csv};
use crate::problem::start_point;

#[derive(Debug, Clone)]
pub struct Run {
    pub run_id: String,
    pub seed: u64,
    pub trace: RunTrace,
}

/// Aggregate training loss of one algorithm at one budget checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algo: String,
    pub budget: u64,
    pub runs: usize,
    pub mean_loss: f64,
    pub min_loss: f64,
    pub max_loss: f64,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub runs: Vec<Run>,
    /// Largest budget reached by every run.
    pub final_budget: u64,
    pub summary: Vec<SummaryRow>,
    pub plot: Vec<SummaryRow>,
}

#[derive(Debug, Clone, Copy)]
enum Algo {
    Cubic,
    Sgd(f64),
}

/// Cubic Newton configuration of one seed, with the theoretical schedule applied
/// when requested.
pub fn cubic_config<P: FiniteSumProblem + ?Sized>(
    cfg: &RunConfig,
    problem: &P,
    seed: u64,
) -> Result<CubicNewtonConfig> {
    let mut c = CubicNewtonConfig {
        seed,
        ..cfg.cubic.clone()
    };
    if let Some(theory) = cfg.theory {
        let meta = problem.metadata();
        let l2 = meta.hessian_lipschitz.ok_or_else(|| {
            HarnessError::config("theory schedule needs a problem with a known Hessian Lipschitz constant")
        })?;
        let x0 = start_point(problem.dim(), cfg.start, seed)?;
        // Both built-in losses are nonnegative, so F(x₀) bounds the optimality gap.
        let gap = full_objective(problem, &x0, &mut EvalCounter::new())?;
        let params = theoretical_params(&TheoryInputs {
            eta: theory.eta,
            beta: theory.beta,
            l2,
            gap,
            sigma1: meta.sigma1,
            sigma2: meta.sigma2,
            tau2: meta.tau2,
            n: problem.dim(),
            r: meta.rank_bound,
        })?;
        c.m1 = params.m1;
        c.m2 = params.m2;
        c.measurements = params.measurements;
        c.alpha = params.alpha;
        c.iterations = params.iterations;
    }
    Ok(c)
}

fn budget_iterations(budget: u64, per_iteration: u64) -> usize {
    (budget / per_iteration.max(1)) as usize + 1
}

fn run_one<P: FiniteSumProblem + Sync + ?Sized>(
    cfg: &RunConfig,
    problem: &P,
    algo: Algo,
    seed: u64,
    shared_budget: Option<u64>,
) -> Result<Run> {
    let x0 = start_point(problem.dim(), cfg.start, seed)?;
    let trace = match algo {
        Algo::Cubic => {
            let mut c = cubic_config(cfg, problem, seed)?;
            if let Some(b) = shared_budget {
                c.eval_budget = Some(b);
                c.iterations = budget_iterations(b, c.evals_per_iteration(problem.dim()));
            }
            cubic_newton_run(problem, &x0, &c)?
        }
        Algo::Sgd(gamma) => {
            let mut c = ZoSgdConfig {
                step_size: gamma,
                seed,
                ..cfg.sgd.base.clone()
            };
            if let Some(b) = shared_budget {
                c.eval_budget = Some(b);
                c.iterations = budget_iterations(b, c.evals_per_iteration(problem.dim()));
            }
            zo_sgd_run(problem, &x0, &c)?
        }
    };
    if trace.budget_exhausted && trace.iterations() == 0 {
        log::warn!("{} seed {seed}: budget below one iteration, trace holds only x0", trace.algo);
    }
    Ok(Run {
        run_id: format!("{}-s{seed}", trace.algo),
        seed,
        trace,
    })
}

fn run_all<P: FiniteSumProblem + Sync + ?Sized>(
    cfg: &RunConfig,
    problem: &P,
    algos: &[Algo],
    shared_budget: Option<u64>,
) -> Result<Vec<Run>> {
    let jobs: Vec<(Algo, u64)> = algos
        .iter()
        .flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();
    jobs.par_iter()
        .map(|&(algo, seed)| run_one(cfg, problem, algo, seed, shared_budget))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Cubic Newton runs, one per seed.
pub fn run_optimize<P: FiniteSumProblem + Sync + ?Sized>(cfg: &RunConfig, problem: &P) -> Result<Vec<Run>> {
    run_all(cfg, problem, &[Algo::Cubic], None)
}

/// `k·B/K` for `k = 0..=K`, deduplicated.
pub fn checkpoints(final_budget: u64, count: usize) -> Vec<u64> {
    let mut b: Vec<u64> = (0..=count as u64).map(|k| k * final_budget / count as u64).collect();
    b.dedup();
    b
}

/// Loss aggregates per algorithm at each budget, using each run's last record that
/// does not exceed the budget.
pub fn summarize(runs: &[Run], budgets: &[u64]) -> Vec<SummaryRow> {
    let mut algos: Vec<&str> = Vec::new();
    for r in runs {
        if !algos.contains(&r.trace.algo.as_str()) {
            algos.push(&r.trace.algo);
        }
    }
    let mut rows = Vec::new();
    for algo in algos {
        let group: Vec<&Run> = runs.iter().filter(|r| r.trace.algo == algo).collect();
        for &budget in budgets {
            let losses: Vec<f64> = group
                .iter()
                .filter_map(|r| r.trace.checkpoint(budget).map(|rec| rec.train_loss))
                .collect();
            if losses.is_empty() {
                continue;
            }
            rows.push(SummaryRow {
                algo: algo.to_string(),
                budget,
                runs: losses.len(),
                mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
                min_loss: losses.iter().copied().fold(f64::INFINITY, f64::min),
                max_loss: losses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    rows
}

/// Cubic Newton and ZO-SGD (every configured step size) from shared starting points.
pub fn run_compare<P: FiniteSumProblem + Sync + ?Sized>(cfg: &RunConfig, problem: &P) -> Result<CompareReport> {
    let mut algos = vec![Algo::Cubic];
    algos.extend(cfg.sgd.step_sizes.iter().map(|&g| Algo::Sgd(g)));
    let runs = run_all(cfg, problem, &algos, cfg.compare.budget)?;
    let final_budget = runs.iter().map(|r| r.trace.total_evals()).min().unwrap_or(0);
    let summary = summarize(&runs, &checkpoints(final_budget, cfg.compare.checkpoints));
    let plot = summarize(&runs, &checkpoints(final_budget, cfg.compare.plot_points));
    Ok(CompareReport {
        runs,
        final_budget,
        summary,
        plot,
    })
}

/// `traces.csv`: one row per recorded iterate of every run.
pub fn write_traces(runs: &[Run], path: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for run in runs {
        for rec in &run.trace.records {
            rows.push(vec![
                run.run_id.clone(),
                run.trace.algo.clone(),
                rec.t.to_string(),
                rec.cum_evals.to_string(),
                fmt_f64(rec.train_loss),
                fmt_f64(rec.step_norm),
                fmt_opt(rec.grad_norm_true),
                rec.recovery_ok().map_or_else(|| "na".into(), |ok| ok.to_string()),
            ]);
        }
    }
    write_csv(
        path,
        &["run_id", "algo", "t", "cum_evals", "train_loss", "step_norm", "grad_norm_true", "recovery_ok"],
        &rows,
    )
}

/// `runs.csv`: per-run totals and the stationarity of the randomly selected output point.
pub fn write_runs<P: FiniteSumProblem + ?Sized>(runs: &[Run], problem: &P, path: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for run in runs {
        let t = &run.trace;
        let output_t = t.output_index.map_or(0, |r| r + 1);
        let report = stationarity_report(problem, t.output_point(), &[]).ok();
        rows.push(vec![
            run.run_id.clone(),
            t.algo.clone(),
            run.seed.to_string(),
            t.iterations().to_string(),
            t.total_evals().to_string(),
            t.budget_exhausted.to_string(),
            fmt_f64(t.records.last().map_or(f64::NAN, |r| r.train_loss)),
            output_t.to_string(),
            fmt_f64(t.records[output_t].train_loss),
            fmt_opt(report.as_ref().map(|r| r.grad_norm)),
            fmt_opt(report.as_ref().map(|r| r.lambda_min)),
            t.records.iter().filter(|r| r.recovery_ok() == Some(false)).count().to_string(),
        ]);
    }
    write_csv(
        path,
        &[
            "run_id",
            "algo",
            "seed",
            "iterations",
            "total_evals",
            "budget_exhausted",
            "final_loss",
            "output_t",
            "output_loss",
            "output_grad_norm",
            "output_lambda_min",
            "recovery_failures",
        ],
        &rows,
    )
}

fn write_summary(rows: &[SummaryRow], x_label: &str, path: &Path) -> Result<()> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.algo.clone(),
                r.budget.to_string(),
                r.runs.to_string(),
                fmt_f64(r.mean_loss),
                fmt_f64(r.min_loss),
                fmt_f64(r.max_loss),
            ]
        })
        .collect();
    write_csv(path, &["algo", x_label, "runs", "mean_loss", "min_loss", "max_loss"], &body)
}

pub fn write_optimize<P: FiniteSumProblem + ?Sized>(runs: &[Run], problem: &P, dir: &Path) -> Result<()> {
    write_traces(runs, &dir.join("traces.csv"))?;
    write_runs(runs, problem, &dir.join("runs.csv"))
}

/// `traces.csv`, `runs.csv`, `summary.csv` (checkpoint aggregates) and `plot.csv`
/// (denser grid of the same aggregates, x = cumulative evaluations).
pub fn write_compare<P: FiniteSumProblem + ?Sized>(report: &CompareReport, problem: &P, dir: &Path) -> Result<()> {
    write_optimize(&report.runs, problem, dir)?;
    write_summary(&report.summary, "budget", &dir.join("summary.csv"))?;
    write_summary(&report.plot, "cum_evals", &dir.join("plot.csv"))
}

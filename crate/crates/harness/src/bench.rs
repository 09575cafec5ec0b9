//! Recovery benchmark: success rates of nuclear-norm recovery over a grid of
//! `(n, r, M, scheme)` cells with exact (noiseless) probes of random low-rank targets.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use zocubic::{recover, DirectionSampler, MeasurementScheme, RecoveryProblem, Sensing, SolverConfig};

use crate::config::RunConfig;
use crate::error::Result;
use crate::output::{fmt_f64, fmt_opt, write_csv};

const STREAM_TARGET: u64 = 0;
const STREAM_PROBES: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub n: usize,
    pub r: usize,
    pub m: usize,
    pub scheme: MeasurementScheme,
}

impl Cell {
    pub fn feasible(&self) -> bool {
        self.r <= self.n && self.m >= 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub cell: Cell,
    /// `None` marks the warning row of a skipped cell.
    pub seed: Option<u64>,
    pub rel_error: Option<f64>,
    pub converged: Option<bool>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell: Cell,
    pub trials: usize,
    pub successes: usize,
    /// `None` for skipped cells.
    pub success_rate: Option<f64>,
    pub mean_rel_error: Option<f64>,
    pub max_rel_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub trials: Vec<Trial>,
    pub cells: Vec<CellSummary>,
}

/// `Σ_k ±w_k w_kᵀ` with Gaussian `w_k` and alternating signs, so ranks above one are
/// indefinite like typical Hessians.
pub fn rank_target(sampler: &mut DirectionSampler, r: usize) -> DMatrix<f64> {
    let n = sampler.dim();
    let mut h = DMatrix::zeros(n, n);
    for k in 0..r {
        let w = sampler.sample_gaussian();
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        h += &w * w.transpose() * sign;
    }
    h
}

/// One trial: relative Frobenius error (absolute for a zero target) and convergence.
pub fn run_trial(cell: Cell, seed: u64, solver: &SolverConfig) -> Result<(f64, bool)> {
    let Cell { n, r, m, scheme } = cell;
    let target = rank_target(&mut DirectionSampler::with_stream(seed, STREAM_TARGET, n)?, r);
    let mut probes = DirectionSampler::with_stream(seed, STREAM_PROBES, n)?;
    let sensing = match scheme {
        MeasurementScheme::Spherical => {
            Sensing::Spherical((0..m).map(|_| (probes.sample_sphere(), probes.sample_sphere())).collect())
        }
        MeasurementScheme::Gaussian => Sensing::Gaussian((0..m).map(|_| probes.sample_gaussian()).collect()),
    };
    let values = (0..m).map(|i| sensing.apply(i, &target)).collect();
    let rec = recover(&RecoveryProblem::new(n, sensing, values, 0.0)?, solver)?;
    let err = (&rec.matrix - &target).norm();
    let scale = target.norm();
    let rel = if scale > 0.0 { err / scale } else { err };
    Ok((rel, rec.diagnostics.converged))
}

fn cells(cfg: &RunConfig) -> Vec<Cell> {
    let b = &cfg.bench;
    let mut out = Vec::new();
    for &n in &b.dims {
        for &r in &b.ranks {
            let ms = b.measurements.clone().unwrap_or_else(|| vec![6 * n * r]);
            for m in ms {
                for &scheme in &b.schemes {
                    out.push(Cell { n, r, m, scheme });
                }
            }
        }
    }
    out
}

/// Runs every feasible cell over all seeds; seeds run in parallel, results keep
/// `(cell, seed)` order.
pub fn run_recover_bench(cfg: &RunConfig) -> Result<BenchReport> {
    let tol = cfg.bench.success_tol;
    let mut trials = Vec::new();
    let mut summaries = Vec::new();
    for cell in cells(cfg) {
        if !cell.feasible() {
            log::warn!(
                "skipping cell n={} r={} M={} {}: needs r <= n and M >= 1",
                cell.n,
                cell.r,
                cell.m,
                cell.scheme.name()
            );
            trials.push(Trial {
                cell,
                seed: None,
                rel_error: None,
                converged: None,
                wall_ms: 0.0,
            });
            summaries.push(CellSummary {
                cell,
                trials: 0,
                successes: 0,
                success_rate: None,
                mean_rel_error: None,
                max_rel_error: None,
            });
            continue;
        }
        let results: Vec<Result<Trial>> = cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                let start = Instant::now();
                let (rel, converged) = run_trial(cell, seed, &cfg.cubic.solver)?;
                let wall_ms = if cfg.bench.timing {
                    start.elapsed().as_secs_f64() * 1e3
                } else {
                    0.0
                };
                Ok(Trial {
                    cell,
                    seed: Some(seed),
                    rel_error: Some(rel),
                    converged: Some(converged),
                    wall_ms,
                })
            })
            .collect();
        let cell_trials = results.into_iter().collect::<Result<Vec<_>>>()?;
        let errors: Vec<f64> = cell_trials.iter().filter_map(|t| t.rel_error).collect();
        let successes = errors.iter().filter(|&&e| e <= tol).count();
        let summary = CellSummary {
            cell,
            trials: errors.len(),
            successes,
            success_rate: Some(successes as f64 / errors.len() as f64),
            mean_rel_error: Some(errors.iter().sum::<f64>() / errors.len() as f64),
            max_rel_error: errors.iter().copied().reduce(f64::max),
        };
        log::info!(
            "n={} r={} M={} {}: {}/{} recovered",
            cell.n,
            cell.r,
            cell.m,
            cell.scheme.name(),
            successes,
            errors.len()
        );
        trials.extend(cell_trials);
        summaries.push(summary);
    }
    Ok(BenchReport {
        trials,
        cells: summaries,
    })
}

/// Writes `trials.csv` and `summary.csv` into `dir`.
pub fn write_recover_bench(report: &BenchReport, dir: &Path) -> Result<()> {
    let cell_fields = |c: &Cell| vec![c.n.to_string(), c.r.to_string(), c.m.to_string(), c.scheme.name().to_string()];
    let trial_rows: Vec<Vec<String>> = report
        .trials
        .iter()
        .map(|t| {
            let mut row = cell_fields(&t.cell);
            row.push(t.seed.map_or_else(|| "na".into(), |s| s.to_string()));
            row.push(fmt_opt(t.rel_error));
            row.push(t.converged.map_or_else(|| "skipped".into(), |c| c.to_string()));
            row.push(fmt_f64(t.wall_ms));
            row
        })
        .collect();
    write_csv(
        &dir.join("trials.csv"),
        &["n", "r", "M", "scheme", "seed", "rel_error", "converged", "wall_ms"],
        &trial_rows,
    )?;
    let summary_rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|s| {
            let mut row = cell_fields(&s.cell);
            row.push(s.trials.to_string());
            row.push(s.successes.to_string());
            row.push(fmt_opt(s.success_rate));
            row.push(fmt_opt(s.mean_rel_error));
            row.push(fmt_opt(s.max_rel_error));
            row
        })
        .collect();
    write_csv(
        &dir.join("summary.csv"),
        &["n", "r", "M", "scheme", "trials", "successes", "success_rate", "mean_rel_error", "max_rel_error"],
        &summary_rows,
    )
}

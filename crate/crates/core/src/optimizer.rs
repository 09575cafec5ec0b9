//! Zeroth-order stochastic cubic Newton, the ZO-SGD baseline, theoretical parameter
//! schedules and second-order stationarity reports.

use nalgebra::DVector;

use crate::cubic::{solve_cubic, CubicModel};
use crate::error::{Error, Result};
use crate::estimators::{estimate_gradient, DirectionSampler};
use crate::linalg::min_eigenvalue;
use crate::problems::{
    analytic_full_gradient, analytic_full_hessian, objective_uncounted, EvalCounter,
    FiniteSumProblem,
};
use crate::recovery::{estimate_hessian_batch, MeasurementScheme, RecoveryDiagnostics, SolverConfig};

// Independent random streams of one run.
const STREAM_GRADIENT_BATCH: u64 = 0;
const STREAM_HESSIAN_BATCH: u64 = 1;
const STREAM_DIRECTIONS: u64 = 2;
const STREAM_OUTPUT_INDEX: u64 = 3;

/// Parameters of the cubic Newton loop. Defaults are the small practical values
/// `m₁ = m₂ = 5`, `M = 8`, `δ = 10⁻³`, `α = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicNewtonConfig {
    pub m1: usize,
    pub m2: usize,
    pub measurements: usize,
    pub delta: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub seed: u64,
    pub scheme: MeasurementScheme,
    pub eval_budget: Option<u64>,
    pub solver: SolverConfig,
    pub cubic_tol: f64,
}

impl Default for CubicNewtonConfig {
    fn default() -> Self {
        Self {
            m1: 5,
            m2: 5,
            measurements: 8,
            delta: 1e-3,
            alpha: 1.0,
            iterations: 100,
            seed: 0,
            scheme: MeasurementScheme::Spherical,
            eval_budget: None,
            solver: SolverConfig::default(),
            cubic_tol: 1e-10,
        }
    }
}

impl CubicNewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m1 == 0 || self.m2 == 0 || self.measurements == 0 {
            return Err(Error::invalid("m1, m2 and M must be positive"));
        }
        if !(self.delta > 0.0 && self.alpha > 0.0 && self.cubic_tol > 0.0) {
            return Err(Error::invalid("delta, alpha and the cubic tolerance must be positive"));
        }
        Ok(())
    }

    /// `2nm₁ + 4Mm₂` (spherical) or `2nm₁ + (2M+1)m₂` (Gaussian).
    pub fn evals_per_iteration(&self, n: usize) -> u64 {
        2 * n as u64 * self.m1 as u64 + self.m2 as u64 * self.scheme.evals_per_component(self.measurements)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoSgdConfig {
    pub batch: usize,
    pub delta: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub eval_budget: Option<u64>,
    pub seed: u64,
}

impl Default for ZoSgdConfig {
    fn default() -> Self {
        Self {
            batch: 5,
            delta: 1e-3,
            step_size: 0.1,
            iterations: 100,
            eval_budget: None,
            seed: 0,
        }
    }
}

impl ZoSgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.delta > 0.0) || !(self.step_size >= 0.0) {
            return Err(Error::invalid("delta must be positive and the step size non-negative"));
        }
        Ok(())
    }

    pub fn evals_per_iteration(&self, n: usize) -> u64 {
        2 * n as u64 * self.batch as u64
    }
}

/// State after iteration `t` (record `t = 0` describes the starting point).
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub t: usize,
    pub cum_evals: u64,
    /// `F(x_t)`, computed outside the evaluation budget.
    pub train_loss: f64,
    pub step_norm: f64,
    pub grad_norm_true: Option<f64>,
    /// `f̂_t(x_{t+1})` for cubic steps.
    pub model_value: Option<f64>,
    pub recovery: Option<RecoveryDiagnostics>,
}

impl IterationRecord {
    pub fn recovery_ok(&self) -> Option<bool> {
        self.recovery.map(|d| d.converged)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub algo: String,
    pub records: Vec<IterationRecord>,
    /// `x_0, x_1, …`.
    pub iterates: Vec<DVector<f64>>,
    /// `R`, uniform on the completed iterations; `None` when no iteration ran.
    pub output_index: Option<usize>,
    pub budget_exhausted: bool,
    /// Regulariser of cubic runs.
    pub alpha: Option<f64>,
}

impl RunTrace {
    /// `x_{R+1}`, or `x_0` when no iteration ran.
    pub fn output_point(&self) -> &DVector<f64> {
        match self.output_index {
            Some(r) => &self.iterates[r + 1],
            None => &self.iterates[0],
        }
    }

    pub fn total_evals(&self) -> u64 {
        self.records.last().map_or(0, |r| r.cum_evals)
    }

    /// Last record whose cumulative evaluations do not exceed `budget`.
    pub fn checkpoint(&self, budget: u64) -> Option<&IterationRecord> {
        self.records.iter().take_while(|r| r.cum_evals <= budget).last()
    }

    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }
}

fn true_grad_norm<P: FiniteSumProblem + ?Sized>(problem: &P, x: &DVector<f64>) -> Option<f64> {
    analytic_full_gradient(problem, x).ok().map(|g| g.norm())
}

fn start_record<P: FiniteSumProblem + ?Sized>(problem: &P, x0: &DVector<f64>) -> IterationRecord {
    IterationRecord {
        t: 0,
        cum_evals: 0,
        train_loss: objective_uncounted(problem, x0),
        step_norm: 0.0,
        grad_norm_true: true_grad_norm(problem, x0),
        model_value: None,
        recovery: None,
    }
}

fn check_start<P: FiniteSumProblem + ?Sized>(problem: &P, x0: &DVector<f64>) -> Result<()> {
    if x0.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: x0.len(),
        });
    }
    Ok(())
}

fn draw_output_index(seed: u64, completed: usize, dim: usize) -> Result<Option<usize>> {
    if completed == 0 {
        return Ok(None);
    }
    let mut s = DirectionSampler::with_stream(seed, STREAM_OUTPUT_INDEX, dim)?;
    Ok(Some(s.sample_index(completed)))
}

/// Runs the zeroth-order stochastic cubic Newton method from `x0`.
///
/// Each iteration draws independent gradient and Hessian batches, builds the
/// finite-difference gradient and the recovered Hessian, and moves to the global
/// minimiser of the cubic model. The run stops early, flagged, when the next iteration
/// would exceed the evaluation budget.
pub fn cubic_newton_run<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x0: &DVector<f64>,
    config: &CubicNewtonConfig,
) -> Result<RunTrace> {
    config.validate()?;
    check_start(problem, x0)?;
    let n = problem.dim();
    let count = problem.num_components();
    let per_iter = config.evals_per_iteration(n);
    let mut grad_batches = DirectionSampler::with_stream(config.seed, STREAM_GRADIENT_BATCH, n)?;
    let mut hess_batches = DirectionSampler::with_stream(config.seed, STREAM_HESSIAN_BATCH, n)?;
    let mut directions = DirectionSampler::with_stream(config.seed, STREAM_DIRECTIONS, n)?;

    let mut counter = EvalCounter::new();
    let mut x = x0.clone();
    let mut records = vec![start_record(problem, x0)];
    let mut iterates = vec![x0.clone()];
    let mut budget_exhausted = false;

    for t in 0..config.iterations {
        if let Some(cap) = config.eval_budget {
            if counter.count() + per_iter > cap {
                budget_exhausted = true;
                break;
            }
        }
        let before = counter.count();
        let gb = grad_batches.sample_batch(count, config.m1);
        let hb = hess_batches.sample_batch(count, config.m2);
        let g = estimate_gradient(problem, &x, &gb, config.delta, &mut counter)?;
        let h = estimate_hessian_batch(
            problem,
            &x,
            &hb,
            config.measurements,
            config.delta,
            config.scheme,
            &mut directions,
            &mut counter,
            &config.solver,
        )?;
        debug_assert_eq!(counter.count() - before, per_iter);
        let model = CubicModel::new(g.gradient, h.matrix, config.alpha)?;
        let step = solve_cubic(&model, config.cubic_tol)?;
        x += &step.step;
        records.push(IterationRecord {
            t: t + 1,
            cum_evals: counter.count(),
            train_loss: objective_uncounted(problem, &x),
            step_norm: step.step.norm(),
            grad_norm_true: true_grad_norm(problem, &x),
            model_value: Some(step.model_value),
            recovery: Some(h.diagnostics),
        });
        iterates.push(x.clone());
    }
    let completed = iterates.len() - 1;
    Ok(RunTrace {
        algo: format!("zo-cubic-{}", config.scheme.name()),
        records,
        iterates,
        output_index: draw_output_index(config.seed, completed, n)?,
        budget_exhausted,
        alpha: Some(config.alpha),
    })
}

/// Zeroth-order SGD with the same coordinate finite-difference gradient estimator.
pub fn zo_sgd_run<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x0: &DVector<f64>,
    config: &ZoSgdConfig,
) -> Result<RunTrace> {
    config.validate()?;
    check_start(problem, x0)?;
    let n = problem.dim();
    let count = problem.num_components();
    let per_iter = config.evals_per_iteration(n);
    let mut batches = DirectionSampler::with_stream(config.seed, STREAM_GRADIENT_BATCH, n)?;
    let mut counter = EvalCounter::new();
    let mut x = x0.clone();
    let mut records = vec![start_record(problem, x0)];
    let mut iterates = vec![x0.clone()];
    let mut budget_exhausted = false;

    for t in 0..config.iterations {
        if let Some(cap) = config.eval_budget {
            if counter.count() + per_iter > cap {
                budget_exhausted = true;
                break;
            }
        }
        let batch = batches.sample_batch(count, config.batch);
        let g = estimate_gradient(problem, &x, &batch, config.delta, &mut counter)?;
        let step = g.gradient * (-config.step_size);
        x += &step;
        records.push(IterationRecord {
            t: t + 1,
            cum_evals: counter.count(),
            train_loss: objective_uncounted(problem, &x),
            step_norm: step.norm(),
            grad_norm_true: true_grad_norm(problem, &x),
            model_value: None,
            recovery: None,
        });
        iterates.push(x.clone());
    }
    let completed = iterates.len() - 1;
    Ok(RunTrace {
        algo: format!("zo-sgd-g{}", config.step_size),
        records,
        iterates,
        output_index: draw_output_index(config.seed, completed, n)?,
        budget_exhausted,
        alpha: None,
    })
}

/// Inputs of the theoretical parameter schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryInputs {
    pub eta: f64,
    pub beta: f64,
    pub l2: f64,
    /// `F(x₀) − F*`.
    pub gap: f64,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    pub tau2: Option<f64>,
    pub n: usize,
    pub r: usize,
}

/// Schedule with every hidden constant set to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryParams {
    pub alpha: f64,
    pub iterations: usize,
    pub m1: usize,
    pub m2: usize,
    pub measurements: usize,
    /// `T·m₁·2n` evaluations spent on gradients.
    pub gradient_evals: u64,
    /// `T·M·m₂` Hessian probes.
    pub hessian_probes: u64,
    /// Batch sizes from the per-step variance argument, `m₁ = (σ₁/κ)²` and
    /// `m₂ = n√(τ₂⁴ + 2σ₂⁴) / (2(L₂+α)κ)` with `κ = η/800`, when the moments are known.
    pub variance_m1: Option<usize>,
    pub variance_m2: Option<usize>,
}

impl TheoryParams {
    pub fn to_config(&self, seed: u64, delta: f64, scheme: MeasurementScheme) -> CubicNewtonConfig {
        CubicNewtonConfig {
            m1: self.m1,
            m2: self.m2,
            measurements: self.measurements,
            delta,
            alpha: self.alpha,
            iterations: self.iterations,
            seed,
            scheme,
            ..CubicNewtonConfig::default()
        }
    }
}

/// `⌈v⌉`, ignoring representation error just above an integer.
fn ceil_count(v: f64) -> usize {
    let r = v.round();
    if (v - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r.max(1.0) as usize
    } else {
        v.ceil().max(1.0) as usize
    }
}

/// `α = L₂`, `T = ⌈√L₂·ΔF/η^{3/2}⌉`, `m₁ = ⌈1/η²⌉`, `m₂ = ⌈n/(ηL₂)⌉`,
/// `M = ⌈n r² log n · log(2nT/(βηL₂))⌉`.
pub fn theoretical_params(inputs: &TheoryInputs) -> Result<TheoryParams> {
    let TheoryInputs {
        eta,
        beta,
        l2,
        gap,
        n,
        r,
        ..
    } = *inputs;
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::invalid(format!("eta must lie in (0,1), got {eta}")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid(format!("beta must lie in (0,1), got {beta}")));
    }
    if !(l2 > 0.0 && gap > 0.0) || n == 0 || r == 0 {
        return Err(Error::invalid("L2, the optimality gap, n and r must be positive"));
    }
    let nf = n as f64;
    let iterations = ceil_count(l2.sqrt() * gap / eta.powf(1.5));
    let m1 = ceil_count(1.0 / (eta * eta));
    let m2 = ceil_count(nf / (eta * l2));
    let log_term = (2.0 * nf * iterations as f64 / (beta * eta * l2)).ln();
    let measurements = ceil_count(nf * (r * r) as f64 * nf.ln() * log_term);
    let kappa = eta / 800.0;
    let variance_m1 = inputs.sigma1.map(|s| ceil_count((s / kappa).powi(2)));
    let variance_m2 = match (inputs.sigma2, inputs.tau2) {
        (Some(s2), Some(t2)) => {
            let alpha = l2;
            Some(ceil_count(
                nf * (t2.powi(4) + 2.0 * s2.powi(4)).sqrt() / (2.0 * (l2 + alpha) * kappa),
            ))
        }
        _ => None,
    };
    Ok(TheoryParams {
        alpha: l2,
        iterations,
        m1,
        m2,
        measurements,
        gradient_evals: iterations as u64 * m1 as u64 * 2 * n as u64,
        hessian_probes: iterations as u64 * measurements as u64 * m2 as u64,
        variance_m1,
        variance_m2,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport {
    pub grad_norm: f64,
    pub lambda_min: f64,
    /// `√‖∇F(x)‖`.
    pub gradient_measure: f64,
    /// `−(2/(3√L₂))·λ_min(∇²F(x))`.
    pub curvature_measure: f64,
    /// Grid values `η` with `√η ≥ max(gradient_measure, curvature_measure)`.
    pub qualifying: Vec<f64>,
    pub smallest_eta: Option<f64>,
}

/// Second-order stationarity of `x` from the analytic oracles; no evaluations are spent.
pub fn stationarity_report<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    eta_grid: &[f64],
) -> Result<StationarityReport> {
    let l2 = problem
        .metadata()
        .hessian_lipschitz
        .ok_or(Error::Unsupported("Hessian Lipschitz constant"))?;
    let grad = analytic_full_gradient(problem, x)?;
    let hess = analytic_full_hessian(problem, x)?;
    let grad_norm = grad.norm();
    let lambda_min = min_eigenvalue(&hess);
    let curvature_measure = if lambda_min == 0.0 {
        0.0
    } else if l2 > 0.0 {
        -2.0 / (3.0 * l2.sqrt()) * lambda_min
    } else if lambda_min < 0.0 {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    };
    let gradient_measure = grad_norm.sqrt();
    let need = gradient_measure.max(curvature_measure);
    let mut qualifying: Vec<f64> = eta_grid.iter().copied().filter(|e| e.sqrt() >= need).collect();
    qualifying.sort_by(f64::total_cmp);
    Ok(StationarityReport {
        grad_norm,
        lambda_min,
        gradient_measure,
        curvature_measure,
        smallest_eta: qualifying.first().copied(),
        qualifying,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(eta: f64, beta: f64, n: usize, r: usize) -> TheoryInputs {
        TheoryInputs {
            eta,
            beta,
            l2: 1.0,
            gap: 1.0,
            sigma1: None,
            sigma2: None,
            tau2: None,
            n,
            r,
        }
    }

    #[test]
    fn theory_worked_examples() {
        let p = theoretical_params(&inputs(0.1, 0.1, 4, 1)).unwrap();
        assert_eq!(p.m1, 100);
        assert_eq!(p.iterations, 32);
        assert_eq!(p.measurements, 57);
        assert_eq!(p.alpha, 1.0);
        assert_eq!(p.m2, 40);
    }

    #[test]
    fn theory_rejects_out_of_range() {
        assert!(theoretical_params(&inputs(1.0, 0.1, 4, 1)).is_err());
        assert!(theoretical_params(&inputs(0.1, 0.0, 4, 1)).is_err());
        assert!(theoretical_params(&inputs(-0.2, 0.5, 4, 1)).is_err());
    }

    #[test]
    fn evals_per_iteration_formula() {
        let mut c = CubicNewtonConfig::default();
        assert_eq!(c.evals_per_iteration(4), 2 * 4 * 5 + 4 * 8 * 5);
        c.scheme = MeasurementScheme::Gaussian;
        assert_eq!(c.evals_per_iteration(4), 2 * 4 * 5 + 17 * 5);
    }
}

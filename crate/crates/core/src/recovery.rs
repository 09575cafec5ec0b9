//! Low-rank Hessian recovery by nuclear-norm minimisation.
//!
//! Given `M` scalar probes `yᵢ ≈ ⟨H, Aᵢ⟩` of a hidden symmetric matrix, [`recover`] solves
//!
//! ```text
//! minimise ‖Ĥ‖_*   subject to   |⟨Ĥ, Aᵢ⟩ − yᵢ| ≤ ε_feas,  Ĥ = Ĥᵀ
//! ```
//!
//! with `Aᵢ = (uᵢvᵢᵀ + vᵢuᵢᵀ)/2` (spherical probes) or `Aᵢ = aᵢaᵢᵀ` (Gaussian probes).
//! The program lives on symmetric matrices, handled in `svec` coordinates so the
//! Frobenius geometry is preserved. The solver is ADMM with a fixed penalty: a
//! least-squares step onto the measurement constraints alternates with soft-thresholding
//! of the eigenvalues.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::{measure_gaussian, measure_spherical, DirectionSampler};
use crate::linalg::{smat, sorted_eigen, svec, svec_len};
use crate::problems::{EvalCounter, FiniteSumProblem};

/// Probe family, matching the two options of the Hessian estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeasurementScheme {
    Spherical,
    Gaussian,
}

impl MeasurementScheme {
    pub fn name(&self) -> &'static str {
        match self {
            MeasurementScheme::Spherical => "spherical",
            MeasurementScheme::Gaussian => "gaussian",
        }
    }

    /// Evaluations consumed per component for `m` probes.
    pub fn evals_per_component(&self, m: usize) -> u64 {
        match self {
            MeasurementScheme::Spherical => 4 * m as u64,
            MeasurementScheme::Gaussian => 2 * m as u64 + 1,
        }
    }
}

impl std::str::FromStr for MeasurementScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spherical" => Ok(MeasurementScheme::Spherical),
            "gaussian" => Ok(MeasurementScheme::Gaussian),
            other => Err(Error::invalid(format!(
                "unknown scheme '{other}' (expected spherical|gaussian)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sensing {
    Spherical(Vec<(DVector<f64>, DVector<f64>)>),
    Gaussian(Vec<DVector<f64>>),
}

impl Sensing {
    pub fn len(&self) -> usize {
        match self {
            Sensing::Spherical(p) => p.len(),
            Sensing::Gaussian(a) => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Symmetrised sensing matrix `Aᵢ`.
    pub fn matrix(&self, i: usize) -> DMatrix<f64> {
        match self {
            Sensing::Spherical(p) => {
                let (u, v) = &p[i];
                (u * v.transpose() + v * u.transpose()) * 0.5
            }
            Sensing::Gaussian(a) => &a[i] * a[i].transpose(),
        }
    }

    /// `⟨X, Aᵢ⟩` for symmetric `X`.
    pub fn apply(&self, i: usize, x: &DMatrix<f64>) -> f64 {
        match self {
            Sensing::Spherical(p) => {
                let (u, v) = &p[i];
                u.dot(&(x * v))
            }
            Sensing::Gaussian(a) => a[i].dot(&(x * &a[i])),
        }
    }

    fn vectors(&self) -> Box<dyn Iterator<Item = &DVector<f64>> + '_> {
        match self {
            Sensing::Spherical(p) => Box::new(p.iter().flat_map(|(u, v)| [u, v])),
            Sensing::Gaussian(a) => Box::new(a.iter()),
        }
    }
}

/// Constraint data for one recovery.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryProblem {
    pub n: usize,
    pub sensing: Sensing,
    pub values: Vec<f64>,
    pub feasibility_tol: f64,
}

impl RecoveryProblem {
    pub fn new(n: usize, sensing: Sensing, values: Vec<f64>, feasibility_tol: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("matrix dimension must be positive"));
        }
        if sensing.is_empty() {
            return Err(Error::invalid("recovery needs at least one measurement"));
        }
        if sensing.len() != values.len() {
            return Err(Error::invalid(format!(
                "{} sensing entries for {} values",
                sensing.len(),
                values.len()
            )));
        }
        if let Some(bad) = sensing.vectors().find(|v| v.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: bad.len(),
            });
        }
        if values.iter().any(|y| !y.is_finite()) {
            return Err(Error::invalid("non-finite measurement value"));
        }
        if !(feasibility_tol >= 0.0 && feasibility_tol.is_finite()) {
            return Err(Error::invalid("feasibility tolerance must be finite and non-negative"));
        }
        Ok(Self {
            n,
            sensing,
            values,
            feasibility_tol,
        })
    }

    pub fn num_measurements(&self) -> usize {
        self.values.len()
    }

    /// `max_i |⟨X, Aᵢ⟩ − yᵢ|`.
    pub fn constraint_residual(&self, x: &DMatrix<f64>) -> f64 {
        (0..self.values.len())
            .map(|i| (self.sensing.apply(i, x) - self.values[i]).abs())
            .fold(0.0, f64::max)
    }
}

/// How the feasibility slack of each per-component program is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Feasibility {
    /// `4L₂δ` (spherical) or `L₂δ·max‖aᵢ‖³` (Gaussian) when the component's Hessian
    /// Lipschitz constant is known, otherwise `1e−6·‖y‖_∞`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub rho: f64,
    /// Primal and dual residuals must fall below `tol · max(1, ‖y‖)`.
    pub tol: f64,
    pub max_iter: usize,
    pub feasibility: Feasibility,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            tol: 1e-7,
            max_iter: 20_000,
            feasibility: Feasibility::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryDiagnostics {
    /// `max_i |⟨Ĥ, Aᵢ⟩ − yᵢ|`; for batch estimates, the worst component.
    pub constraint_residual: f64,
    pub nuclear_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredHessian {
    pub matrix: DMatrix<f64>,
    pub diagnostics: RecoveryDiagnostics,
}

/// Proximal map of `τ‖·‖_*` on symmetric matrices: every eigenvalue moves toward zero by
/// `τ` and is clipped there; eigenvectors are kept.
pub fn soft_threshold_spectrum(a: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let (values, vectors) = sorted_eigen(a);
    let shrunk = values.map(|l| l.signum() * (l.abs() - tau).max(0.0));
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| vectors[(i, j)] * shrunk[j]);
    let out = scaled * vectors.transpose();
    crate::linalg::symmetrize(&out)
}

/// Working-scale `‖Ĥ‖_F` used inside the ADMM loop. The nuclear-norm program is
/// positively homogeneous in `y`, so the data is rescaled to this size before solving
/// with the fixed penalty and mapped back afterwards.
const WORKING_SCALE: f64 = 1.0;

struct Operator {
    /// Normalised sensing rows, `M × d`.
    rows: DMatrix<f64>,
    /// Right singular vectors spanning the row space, `d × k`.
    basis: DMatrix<f64>,
    singular: DVector<f64>,
    /// Left singular vectors, `M × k`.
    left: DMatrix<f64>,
}

impl Operator {
    fn new(rows: DMatrix<f64>) -> Self {
        let (m, d) = rows.shape();
        let svd = if m <= d {
            rows.clone().svd(true, true)
        } else {
            rows.transpose().svd(true, true)
        };
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let (left_full, right_full) = if m <= d { (u, vt.transpose()) } else { (vt.transpose(), u) };
        let top = svd.singular_values.max();
        let cutoff = top * 1e-12 * (m.max(d) as f64);
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > cutoff)
            .collect();
        let basis = DMatrix::from_fn(d, keep.len(), |r, c| right_full[(r, keep[c])]);
        let left = DMatrix::from_fn(m, keep.len(), |r, c| left_full[(r, keep[c])]);
        let singular = DVector::from_iterator(keep.len(), keep.iter().map(|&i| svd.singular_values[i]));
        Self {
            rows,
            basis,
            singular,
            left,
        }
    }

    /// Least-norm solution of `rows · x = y` (least squares if inconsistent).
    fn least_norm(&self, y: &DVector<f64>) -> DVector<f64> {
        let coeff = self.left.transpose() * y;
        let scaled = coeff.component_div(&self.singular);
        &self.basis * scaled
    }

    /// Orthogonal projection onto the null space of `rows`.
    fn null_project(&self, w: &DVector<f64>) -> DVector<f64> {
        w - &self.basis * (self.basis.transpose() * w)
    }

    /// `(I + rowsᵀrows)⁻¹ b`.
    fn regularized_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let coeff = self.basis.transpose() * b;
        let damp = DVector::from_iterator(
            self.singular.len(),
            self.singular.iter().zip(coeff.iter()).map(|(s, c)| c * s * s / (1.0 + s * s)),
        );
        b - &self.basis * damp
    }
}

fn prox_nuclear(w: &DVector<f64>, n: usize, tau: f64) -> DVector<f64> {
    svec(&soft_threshold_spectrum(&smat(w, n), tau))
}

/// Solves the nuclear-norm program from the zero initialisation.
///
/// Returns `converged = false` together with the last iterate when the iteration cap is
/// reached; that is not treated as an error.
pub fn recover(problem: &RecoveryProblem, config: &SolverConfig) -> Result<RecoveredHessian> {
    if problem.values.is_empty() {
        return Err(Error::invalid("recovery needs at least one measurement"));
    }
    if !(config.rho > 0.0 && config.tol > 0.0) {
        return Err(Error::invalid("solver penalty and tolerance must be positive"));
    }
    let n = problem.n;
    let d = svec_len(n);
    let eps = problem.feasibility_tol;
    let zero_result = |iterations| RecoveredHessian {
        matrix: DMatrix::zeros(n, n),
        diagnostics: RecoveryDiagnostics {
            constraint_residual: problem.values.iter().fold(0.0, |a: f64, y| a.max(y.abs())),
            nuclear_norm: 0.0,
            iterations,
            converged: true,
            primal_residual: 0.0,
            dual_residual: 0.0,
        },
    };
    // Ĥ = 0 is feasible, hence optimal.
    if problem.values.iter().all(|y| y.abs() <= eps) {
        return Ok(zero_result(0));
    }

    let mut keep = Vec::new();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut slack = Vec::new();
    for i in 0..problem.values.len() {
        let row = svec(&problem.sensing.matrix(i));
        let norm = row.norm();
        if norm == 0.0 {
            continue;
        }
        keep.push(i);
        rows.push(row / norm);
        y.push(problem.values[i] / norm);
        slack.push(eps / norm);
    }
    if rows.is_empty() {
        return Ok(zero_result(0));
    }
    let m = rows.len();
    let op = Operator::new(DMatrix::from_fn(m, d, |i, j| rows[i][j]));
    let y = DVector::from_vec(y);
    let slack = DVector::from_vec(slack);

    let particular = op.least_norm(&y);
    let scale = particular.norm();
    if scale == 0.0 {
        return Ok(zero_result(0));
    }
    let factor = WORKING_SCALE / scale;
    let y_w = &y * factor;
    let slack_w = &slack * factor;
    let particular_w = &particular * factor;
    let raw_norm = DVector::from_column_slice(&problem.values).norm();
    let tol = config.tol * raw_norm.max(1.0) * factor;
    let rho = config.rho;

    let mut z = DVector::zeros(d);
    let mut u = DVector::zeros(d);
    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    if eps == 0.0 {
        for it in 1..=config.max_iter {
            let x = op.null_project(&(&z - &u)) + &particular_w;
            let z_next = prox_nuclear(&(&x + &u), n, 1.0 / rho);
            u += &x - &z_next;
            primal = (&x - &z_next).norm();
            dual = rho * (&z_next - &z).norm();
            z = z_next;
            iterations = it;
            if primal <= tol && dual <= tol {
                converged = true;
                break;
            }
        }
    } else {
        let lower = &y_w - &slack_w;
        let upper = &y_w + &slack_w;
        let mut w = y_w.clone();
        let mut v = DVector::zeros(m);
        for it in 1..=config.max_iter {
            let rhs = &z - &u + op.rows.transpose() * (&w - &v);
            let x = op.regularized_solve(&rhs);
            let ax = &op.rows * &x;
            let z_next = prox_nuclear(&(&x + &u), n, 1.0 / rho);
            let shifted = &ax + &v;
            let w_next = DVector::from_fn(m, |i, _| shifted[i].clamp(lower[i], upper[i]));
            u += &x - &z_next;
            v += &ax - &w_next;
            primal = ((&x - &z_next).norm_squared() + (&ax - &w_next).norm_squared()).sqrt();
            dual = rho
                * ((&z_next - &z).norm_squared()
                    + (op.rows.transpose() * (&w_next - &w)).norm_squared())
                .sqrt();
            z = z_next;
            w = w_next;
            iterations = it;
            if primal <= tol && dual <= tol {
                converged = true;
                break;
            }
        }
    }

    let matrix = smat(&(z / factor), n);
    let diagnostics = RecoveryDiagnostics {
        constraint_residual: problem.constraint_residual(&matrix),
        nuclear_norm: crate::linalg::nuclear_norm(&matrix),
        iterations,
        converged,
        primal_residual: primal / factor,
        dual_residual: dual / factor,
    };
    if !converged {
        log::debug!(
            "recovery hit iteration cap {} (primal {:.3e}, dual {:.3e})",
            config.max_iter,
            diagnostics.primal_residual,
            diagnostics.dual_residual
        );
    }
    Ok(RecoveredHessian { matrix, diagnostics })
}

/// Default feasibility slack for one component's probes.
pub fn auto_feasibility(lipschitz: Option<f64>, delta: f64, sensing: &Sensing, values: &[f64]) -> f64 {
    match (lipschitz, sensing) {
        (Some(l2), Sensing::Spherical(_)) => 4.0 * l2 * delta,
        (Some(l2), Sensing::Gaussian(a)) => {
            l2 * delta * a.iter().map(|v| v.norm().powi(3)).fold(0.0, f64::max)
        }
        (None, _) => 1e-6 * values.iter().fold(0.0, |acc: f64, y| acc.max(y.abs())),
    }
}

/// Hessian estimate averaged over a component batch: each component gets `m` fresh
/// probes and its own recovery.
///
/// Costs `4·m·|batch|` (spherical) or `(2m+1)·|batch|` (Gaussian) evaluations. If any
/// component fails to converge the batch is flagged but the mean is still returned.
#[allow(clippy::too_many_arguments)]
pub fn estimate_hessian_batch<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    batch: &[usize],
    m: usize,
    delta: f64,
    scheme: MeasurementScheme,
    sampler: &mut DirectionSampler,
    counter: &mut EvalCounter,
    config: &SolverConfig,
) -> Result<RecoveredHessian> {
    if batch.is_empty() {
        return Err(Error::invalid("hessian batch is empty"));
    }
    if m == 0 {
        return Err(Error::invalid("need at least one measurement per component"));
    }
    let n = problem.dim();
    if sampler.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: sampler.dim(),
        });
    }
    let mut sum = DMatrix::zeros(n, n);
    let mut diag = RecoveryDiagnostics {
        constraint_residual: 0.0,
        nuclear_norm: 0.0,
        iterations: 0,
        converged: true,
        primal_residual: 0.0,
        dual_residual: 0.0,
    };
    for &xi in batch {
        let (sensing, values) = match scheme {
            MeasurementScheme::Spherical => {
                let mut pairs = Vec::with_capacity(m);
                let mut values = Vec::with_capacity(m);
                for _ in 0..m {
                    let u = sampler.sample_sphere();
                    let v = sampler.sample_sphere();
                    let probe = measure_spherical(problem, x, xi, &u, &v, delta, counter)?;
                    values.push(probe.value);
                    pairs.push((probe.u, probe.v));
                }
                (Sensing::Spherical(pairs), values)
            }
            MeasurementScheme::Gaussian => {
                let base = crate::problems::eval_component(problem, x, xi, counter)?;
                let mut dirs = Vec::with_capacity(m);
                let mut values = Vec::with_capacity(m);
                for _ in 0..m {
                    let a = sampler.sample_gaussian();
                    let probe = measure_gaussian(problem, x, xi, &a, delta, base, counter)?;
                    values.push(probe.value);
                    dirs.push(probe.a);
                }
                (Sensing::Gaussian(dirs), values)
            }
        };
        let eps = match config.feasibility {
            Feasibility::Fixed(e) => e,
            Feasibility::Auto => {
                auto_feasibility(problem.component_hessian_lipschitz(xi), delta, &sensing, &values)
            }
        };
        let rp = RecoveryProblem::new(n, sensing, values, eps)?;
        let rec = recover(&rp, config)?;
        sum += &rec.matrix;
        let d = rec.diagnostics;
        diag.constraint_residual = diag.constraint_residual.max(d.constraint_residual);
        diag.iterations += d.iterations;
        diag.converged &= d.converged;
        diag.primal_residual = diag.primal_residual.max(d.primal_residual);
        diag.dual_residual = diag.dual_residual.max(d.dual_residual);
    }
    let matrix = sum / batch.len() as f64;
    diag.nuclear_norm = crate::linalg::nuclear_norm(&matrix);
    Ok(RecoveredHessian {
        matrix,
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -1.0]);
        let out = soft_threshold_spectrum(&a, 1.0);
        assert!((out - DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0])).amax() < 1e-14);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, -2.0]);
        assert!((soft_threshold_spectrum(&b, 0.0) - &b).amax() < 1e-14);
        assert_eq!(soft_threshold_spectrum(&b, 10.0).amax(), 0.0);
    }

    #[test]
    fn zero_measurements_give_zero() {
        let mut s = DirectionSampler::new(1, 4).unwrap();
        let dirs = (0..6).map(|_| s.sample_gaussian()).collect();
        let p = RecoveryProblem::new(4, Sensing::Gaussian(dirs), vec![0.0; 6], 0.0).unwrap();
        let r = recover(&p, &SolverConfig::default()).unwrap();
        assert_eq!(r.matrix, DMatrix::zeros(4, 4));
        assert!(r.diagnostics.converged);
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        assert!(RecoveryProblem::new(3, Sensing::Gaussian(vec![]), vec![], 0.0).is_err());
        let a = DVector::from_element(2, 1.0);
        assert!(RecoveryProblem::new(3, Sensing::Gaussian(vec![a]), vec![1.0], 0.0).is_err());
    }

    #[test]
    fn scheme_costs() {
        assert_eq!(MeasurementScheme::Spherical.evals_per_component(8), 32);
        assert_eq!(MeasurementScheme::Gaussian.evals_per_component(8), 17);
    }
}

//! Global minimisation of the cubic-regularised model
//!
//! ```text
//! f̂(s) = ⟨g, s⟩ + ½⟨s, Hs⟩ + (α/6)‖s‖³
//! ```
//!
//! The global minimiser satisfies `g + Hs + (α/2)‖s‖s = 0` and
//! `H + (α/2)‖s‖I ⪰ 0`. With `H = VΛVᵀ` it is `s = −V(Λ + (αρ/2)I)⁻¹Vᵀg` where the radius
//! `ρ = ‖s‖ ≥ max(0, −2λ_min/α)` solves the secular equation
//! `φ(ρ) = ‖(Λ + (αρ/2)I)⁻¹Vᵀg‖ − ρ = 0`. When `g` has no component along the bottom
//! eigenspace and the interior solution is too short (the hard case), the step is padded
//! with a bottom eigenvector.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, min_eigenvalue, sorted_eigen};

/// Bottom-eigenspace components of `g` below this fraction of `‖g‖` count as zero.
const HARD_CASE_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CubicModel {
    pub g: DVector<f64>,
    pub h: DMatrix<f64>,
    pub alpha: f64,
}

impl CubicModel {
    pub fn new(g: DVector<f64>, h: DMatrix<f64>, alpha: f64) -> Result<Self> {
        let n = g.len();
        if h.nrows() != n || h.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: h.nrows(),
            });
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("cubic regulariser must be positive, got {alpha}")));
        }
        if g.iter().chain(h.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite model data"));
        }
        if asymmetry(&h) > 1e-9 {
            return Err(Error::invalid("model Hessian is not symmetric"));
        }
        Ok(Self { g, h, alpha })
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    /// `f̂(s)`.
    pub fn value(&self, s: &DVector<f64>) -> f64 {
        self.g.dot(s) + 0.5 * s.dot(&(&self.h * s)) + self.alpha / 6.0 * s.norm().powi(3)
    }

    /// `‖g + Hs + (α/2)‖s‖s‖`.
    pub fn stationarity_residual(&self, s: &DVector<f64>) -> f64 {
        (&self.g + &self.h * s + s * (0.5 * self.alpha * s.norm())).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubicStep {
    pub step: DVector<f64>,
    pub model_value: f64,
    pub stationarity_residual: f64,
    /// `λ_min(H) + (α/2)‖s‖`.
    pub curvature_slack: f64,
    pub hard_case: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalityCertificate {
    pub residual: f64,
    pub slack: f64,
    pub pass: bool,
}

/// Checks the first-order and curvature conditions of a global minimiser at `s`.
pub fn check_optimality(model: &CubicModel, s: &DVector<f64>, tol: f64) -> Result<OptimalityCertificate> {
    if s.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: s.len(),
        });
    }
    let residual = model.stationarity_residual(s);
    let slack = min_eigenvalue(&model.h) + 0.5 * model.alpha * s.norm();
    Ok(OptimalityCertificate {
        residual,
        slack,
        pass: residual <= tol && slack >= -tol,
    })
}

/// `‖(D + (ασ/2)I)⁻¹ c‖` over the selected coordinates, with `D` the eigenvalues
/// shifted by `(α/2)·floor`, together with `Σ c²/(D + ασ/2)³`.
fn radius_norm(shifted: &DVector<f64>, coeff: &DVector<f64>, alpha: f64, sigma: f64, active: &[bool]) -> (f64, f64) {
    let mut sq = 0.0;
    let mut cube = 0.0;
    for i in 0..shifted.len() {
        if !active[i] || coeff[i] == 0.0 {
            continue;
        }
        let denom = shifted[i] + 0.5 * alpha * sigma;
        sq += (coeff[i] / denom).powi(2);
        cube += coeff[i] * coeff[i] / denom.powi(3);
    }
    (sq.sqrt(), cube)
}

/// Globally minimises the model; `tol` bounds the stationarity residual the root finder
/// aims for.
///
/// The radius is parametrised as `ρ = floor + σ`, so that roots just above the pole at
/// `floor = max(0, −2λ_min/α)` are resolved to full relative precision in `σ`.
pub fn solve_cubic(model: &CubicModel, tol: f64) -> Result<CubicStep> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let n = model.dim();
    let alpha = model.alpha;
    if n == 0 {
        return Ok(CubicStep {
            step: DVector::zeros(0),
            model_value: 0.0,
            stationarity_residual: 0.0,
            curvature_slack: 0.0,
            hard_case: false,
        });
    }
    let (lambda, basis) = sorted_eigen(&model.h);
    let lambda_min = lambda[0];
    let coeff = basis.transpose() * &model.g;
    let g_norm = coeff.norm();
    let floor = (-2.0 * lambda_min / alpha).max(0.0);
    // λ_i + (α/2)·floor, computed without cancellation.
    let shifted = if lambda_min < 0.0 {
        lambda.map(|l| l - lambda_min)
    } else {
        lambda.clone()
    };

    let spread = lambda.amax().max(1.0);
    let bottom: Vec<bool> = lambda.iter().map(|&l| l - lambda_min <= 1e-12 * spread).collect();
    let bottom_norm = (0..n)
        .filter(|&i| bottom[i])
        .map(|i| coeff[i] * coeff[i])
        .sum::<f64>()
        .sqrt();
    let degenerate = lambda_min <= 0.0 && bottom_norm <= HARD_CASE_THRESHOLD * g_norm;
    // Coordinates that take part in the secular equation.
    let active: Vec<bool> = if degenerate {
        bottom.iter().map(|b| !b).collect()
    } else {
        vec![true; n]
    };

    let mut hard_case = false;
    let mut eig_step = DVector::zeros(n);
    if degenerate && radius_norm(&shifted, &coeff, alpha, 0.0, &active).0 <= floor {
        // Hard case (including g = 0): fill the radius with a bottom eigenvector.
        hard_case = lambda_min < 0.0;
        for i in 0..n {
            if active[i] && coeff[i] != 0.0 {
                eig_step[i] = -coeff[i] / shifted[i];
            }
        }
        let pad = (floor * floor - eig_step.norm_squared()).max(0.0).sqrt();
        if pad > 0.0 {
            eig_step[0] = pad;
        }
    } else {
        let sigma = secular_root(&shifted, &coeff, alpha, floor, g_norm, &active, tol);
        for i in 0..n {
            if active[i] && coeff[i] != 0.0 {
                eig_step[i] = -coeff[i] / (shifted[i] + 0.5 * alpha * sigma);
            }
        }
    }
    let mut step = &basis * &eig_step;
    if hard_case {
        // ±(bottom eigenvector) give the same model value; keep the lexicographically
        // larger step.
        let mut flipped = &basis * &eig_step;
        let bottom_vec = basis.column(0);
        flipped -= bottom_vec * (2.0 * eig_step[0]);
        if lexicographic_gt(&flipped, &step) {
            step = flipped;
        }
    }

    let model_value = model.value(&step);
    Ok(CubicStep {
        stationarity_residual: model.stationarity_residual(&step),
        curvature_slack: lambda_min + 0.5 * alpha * step.norm(),
        model_value,
        step,
        hard_case,
    })
}

fn lexicographic_gt(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    let scale = a.amax().max(b.amax()).max(f64::MIN_POSITIVE);
    for (x, y) in a.iter().zip(b.iter()) {
        if (x - y).abs() > 1e-12 * scale {
            return x > y;
        }
    }
    false
}

/// Safeguarded Newton/bisection for `σ ≥ 0` in `φ(σ) = ‖s(σ)‖ − (floor + σ)`, which is
/// convex and strictly decreasing.
fn secular_root(
    shifted: &DVector<f64>,
    coeff: &DVector<f64>,
    alpha: f64,
    floor: f64,
    g_norm: f64,
    active: &[bool],
    tol: f64,
) -> f64 {
    let phi = |sigma: f64| {
        let (norm, cube) = radius_norm(shifted, coeff, alpha, sigma, active);
        let deriv = if norm > 0.0 { -0.5 * alpha * cube / norm - 1.0 } else { -1.0 };
        (norm - floor - sigma, deriv, norm)
    };
    let mut lo = 0.0;
    let mut hi = (2.0 * g_norm / alpha).sqrt() + 1.0;
    if phi(lo).0 <= 0.0 {
        return lo;
    }
    let mut sigma = hi;
    for _ in 0..500 {
        let (val, deriv, norm) = phi(sigma);
        // The stationarity residual equals (α/2)|φ|‖s‖.
        let done = val.abs() <= tol * (1.0 + floor + sigma) && 0.5 * alpha * val.abs() * norm <= 0.1 * tol;
        if done || val == 0.0 {
            return sigma;
        }
        if val > 0.0 {
            lo = lo.max(sigma);
        } else {
            hi = hi.min(sigma);
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return 0.5 * (lo + hi);
        }
        let newton = sigma - val / deriv;
        sigma = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    sigma
}

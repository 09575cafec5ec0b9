//! Zeroth-order derivative probes.
//!
//! - coordinate central differences for the gradient, averaged over a component batch;
//! - the four-point spherical probe `y ≈ uᵀ∇²f(x)v`;
//! - the three-point Gaussian probe `q ≈ aᵀ∇²f(x)a`.
//!
//! Every probe advances the caller's [`EvalCounter`] by exactly the number of scalar
//! evaluations it performs.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::problems::{EvalCounter, FiniteSumProblem};

/// Unit-norm tolerance accepted by [`measure_spherical`].
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Seeded source of probe directions and component indices.
#[derive(Debug, Clone)]
pub struct DirectionSampler {
    rng: ChaCha8Rng,
    dim: usize,
}

impl DirectionSampler {
    pub fn new(seed: u64, dim: usize) -> Result<Self> {
        Self::from_rng(ChaCha8Rng::seed_from_u64(seed), dim)
    }

    /// Independent stream `stream` derived from `seed`.
    pub fn with_stream(seed: u64, stream: u64, dim: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self::from_rng(rng, dim)
    }

    pub fn from_rng(rng: ChaCha8Rng, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("direction dimension must be positive"));
        }
        Ok(Self { rng, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Vector with i.i.d. standard normal coordinates.
    pub fn sample_gaussian(&mut self) -> DVector<f64> {
        DVector::from_fn(self.dim, |_, _| self.rng.sample(StandardNormal))
    }

    /// Uniform point on the unit sphere (normalised Gaussian).
    pub fn sample_sphere(&mut self) -> DVector<f64> {
        loop {
            let g = self.sample_gaussian();
            let norm = g.norm();
            if norm > 0.0 && norm.is_finite() {
                return g / norm;
            }
        }
    }

    /// `m` component indices drawn uniformly with replacement from `0..count`.
    pub fn sample_batch(&mut self, count: usize, m: usize) -> Vec<usize> {
        (0..m).map(|_| self.rng.random_range(0..count)).collect()
    }

    pub fn sample_index(&mut self, count: usize) -> usize {
        self.rng.random_range(0..count)
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphericalMeasurement {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    /// `[f(x+δv+δu) − f(x−δv+δu) − f(x+δv−δu) + f(x−δv−δu)] / (4δ²)`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasurement {
    pub a: DVector<f64>,
    /// `[f(x+δa) + f(x−δa) − 2f(x)] / δ²`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub gradient: DVector<f64>,
    pub delta: f64,
    pub batch_size: usize,
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {delta}")));
    }
    Ok(())
}

fn check_inputs<P: FiniteSumProblem + ?Sized>(problem: &P, x: &DVector<f64>, xi: &[usize]) -> Result<()> {
    if x.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: x.len(),
        });
    }
    let count = problem.num_components();
    if let Some(&bad) = xi.iter().find(|&&i| i >= count) {
        return Err(Error::ComponentOutOfRange { index: bad, count });
    }
    Ok(())
}

/// Batch-averaged coordinate central differences; costs `2·n·m₁` evaluations.
pub fn estimate_gradient<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    batch: &[usize],
    delta: f64,
    counter: &mut EvalCounter,
) -> Result<GradientEstimate> {
    check_delta(delta)?;
    if batch.is_empty() {
        return Err(Error::invalid("gradient batch is empty"));
    }
    check_inputs(problem, x, batch)?;
    let n = x.len();
    let mut g = DVector::zeros(n);
    let mut probe = x.clone();
    for &xi in batch {
        for j in 0..n {
            probe[j] = x[j] + delta;
            let plus = problem.component_value(&probe, xi);
            probe[j] = x[j] - delta;
            let minus = problem.component_value(&probe, xi);
            probe[j] = x[j];
            g[j] += (plus - minus) / (2.0 * delta);
        }
    }
    counter.record(2 * n as u64 * batch.len() as u64);
    g /= batch.len() as f64;
    Ok(GradientEstimate {
        gradient: g,
        delta,
        batch_size: batch.len(),
    })
}

/// Four-point probe of `uᵀ∇²f(x; ξ)v`; costs 4 evaluations.
pub fn measure_spherical<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    xi: usize,
    u: &DVector<f64>,
    v: &DVector<f64>,
    delta: f64,
    counter: &mut EvalCounter,
) -> Result<SphericalMeasurement> {
    check_delta(delta)?;
    check_inputs(problem, x, &[xi])?;
    for d in [u, v] {
        if d.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: d.len(),
            });
        }
        if (d.norm() - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::invalid(format!("direction has norm {}, expected 1", d.norm())));
        }
    }
    let du = u * delta;
    let dv = v * delta;
    let pp = problem.component_value(&(x + &dv + &du), xi);
    let mp = problem.component_value(&(x - &dv + &du), xi);
    let pm = problem.component_value(&(x + &dv - &du), xi);
    let mm = problem.component_value(&(x - &dv - &du), xi);
    counter.record(4);
    Ok(SphericalMeasurement {
        u: u.clone(),
        v: v.clone(),
        value: (pp - mp - pm + mm) / (4.0 * delta * delta),
    })
}

/// Three-point probe of `aᵀ∇²f(x; ξ)a` given the shared base value `f(x; ξ)`; costs 2
/// evaluations (the base value is paid for by the caller, once per component).
pub fn measure_gaussian<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    xi: usize,
    a: &DVector<f64>,
    delta: f64,
    base_value: f64,
    counter: &mut EvalCounter,
) -> Result<GaussianMeasurement> {
    check_delta(delta)?;
    check_inputs(problem, x, &[xi])?;
    if a.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: a.len(),
        });
    }
    let da = a * delta;
    let plus = problem.component_value(&(x + &da), xi);
    let minus = problem.component_value(&(x - &da), xi);
    counter.record(2);
    Ok(GaussianMeasurement {
        a: a.clone(),
        value: (plus + minus - 2.0 * base_value) / (delta * delta),
    })
}

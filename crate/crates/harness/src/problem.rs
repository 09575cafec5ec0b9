//! Builds the objective named by a run configuration.

use nalgebra::DVector;
use zocubic::{
    load_csv, standardize, DatasetRecord, DirectionSampler, FiniteSumProblem, Label,
    LinearRegression, LogisticRegression,
};

use crate::config::{Loss, ProblemSpec, StartPoint};
use crate::error::Result;

pub type SharedProblem = Box<dyn FiniteSumProblem + Send + Sync>;

// Random stream used for starting points; disjoint from the optimizer's streams.
const STREAM_START: u64 = 16;

/// Loads (and optionally standardizes) the dataset, or generates the synthetic one.
pub fn build_problem(spec: &ProblemSpec) -> Result<SharedProblem> {
    match spec {
        ProblemSpec::Dataset {
            path,
            schema,
            loss,
            standardize: scale,
        } => {
            let mut records = load_csv(path, schema)?;
            if *scale {
                standardize(&mut records);
            }
            log::info!("loaded {} records from {}", records.len(), path.display());
            Ok(match loss {
                Loss::Logistic => Box::new(LogisticRegression::new(&records)?),
                Loss::Linear => Box::new(LinearRegression::new(&records)?),
            })
        }
        ProblemSpec::SyntheticLogistic { dim, samples, seed } => {
            Ok(Box::new(LogisticRegression::new(&synthetic_records(*dim, *samples, *seed)?)?))
        }
    }
}

/// Gaussian features labelled by the sign of `zᵀw + ν/2`, with teacher
/// `w_j = (−1/2)^j` and standard Gaussian label noise `ν`.
pub fn synthetic_records(dim: usize, samples: usize, seed: u64) -> Result<Vec<DatasetRecord>> {
    let mut s = DirectionSampler::new(seed, dim)?;
    let teacher = DVector::from_fn(dim, |j, _| (-0.5f64).powi(j as i32));
    Ok((0..samples)
        .map(|_| {
            let z = s.sample_gaussian();
            let noise = 0.5 * s.sample_gaussian()[0];
            let label = if z.dot(&teacher) + noise >= 0.0 {
                Label::Positive
            } else {
                Label::Negative
            };
            DatasetRecord::new(z, label)
        })
        .collect())
}

/// `x₀` of run `seed`; every algorithm of the same seed starts from the same point.
pub fn start_point(dim: usize, start: StartPoint, seed: u64) -> Result<DVector<f64>> {
    Ok(match start {
        StartPoint::Zero => DVector::zeros(dim),
        StartPoint::Gaussian => DirectionSampler::with_stream(seed, STREAM_START, dim)?.sample_gaussian(),
    })
}

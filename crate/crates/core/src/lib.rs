//! Zeroth-order stochastic cubic Newton method with low-rank Hessian recovery.
//!
//! The crate is organised bottom-up:
//!
//! - [`problems`]: finite-sum objectives `F(x) = (1/N) Σ f(x; ξ)`, CSV ingestion,
//!   analytic derivative oracles used for verification, and evaluation accounting.
//! - [`estimators`]: coordinate finite-difference gradients and the two scalar Hessian
//!   probes (four-point spherical and three-point Gaussian quadratic form).
//! - [`recovery`]: nuclear-norm minimisation that turns `M` scalar probes into a
//!   symmetric low-rank Hessian estimate, and batch averaging over components.
//! - [`cubic`]: global solver for the cubic-regularised model with optimality certificates.
//! - [`optimizer`]: the stochastic cubic Newton loop, the ZO-SGD baseline, theoretical
//!   parameter schedules and second-order stationarity reporting.
//!
//! Only scalar evaluations of `f(·; ξ)` are ever consumed by the optimisers; the analytic
//! oracles exist so tests and traces can measure progress without touching the budget.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cubic;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod optimizer;
pub mod problems;
pub mod recovery;

pub use cubic::{check_optimality, solve_cubic, CubicModel, CubicStep, OptimalityCertificate};
pub use error::{Error, Result};
pub use estimators::{
    estimate_gradient, measure_gaussian, measure_spherical, DirectionSampler, GaussianMeasurement,
    GradientEstimate, SphericalMeasurement,
};
pub use optimizer::{
    cubic_newton_run, stationarity_report, theoretical_params, zo_sgd_run, CubicNewtonConfig,
    IterationRecord, RunTrace, StationarityReport, TheoryInputs, TheoryParams, ZoSgdConfig,
};
pub use problems::{
    analytic_full_gradient, analytic_full_hessian, analytic_gradient, analytic_hessian,
    eval_component, full_objective, load_csv, make_linear_nn, standardize, BlackBox, ColumnRef,
    CsvSchema, DatasetRecord, EvalCounter, FiniteSumProblem, Label, LinearNetwork,
    LinearRegression, LogisticRegression, ProblemMetadata, QuadraticSum,
};
pub use recovery::{
    auto_feasibility, estimate_hessian_batch, recover, soft_threshold_spectrum, Feasibility,
    MeasurementScheme, RecoveredHessian, RecoveryDiagnostics, RecoveryProblem, Sensing, SolverConfig,
};

//! Finite-sum objectives, dataset ingestion and evaluation accounting.
//!
//! A [`FiniteSumProblem`] exposes raw component values `f(x; ξ)`. Everything that the
//! optimisers consume goes through [`eval_component`] / [`full_objective`], which validate
//! their inputs and advance an [`EvalCounter`]. The analytic oracles are only used by
//! tests, traces and stationarity reports, and never touch a counter.

use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `max_t |ℓ'''(t)|` for the logistic loss `ℓ(t) = log(1 + e^{-t})`, attained where
/// `σ(t) = (3 ± √3)/6`.
pub const LOGISTIC_THIRD_DERIVATIVE_BOUND: f64 = 0.096_225_044_864_937_63;

/// Number of scalar evaluations of some `f(·; ξ)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EvalCounter {
    count: u64,
}

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn record(&mut self, n: u64) {
        self.count += n;
    }

    /// Combines two independently accumulated counters.
    pub fn merge(self, other: EvalCounter) -> EvalCounter {
        EvalCounter {
            count: self.count + other.count,
        }
    }
}

impl Add for EvalCounter {
    type Output = EvalCounter;

    fn add(self, rhs: EvalCounter) -> EvalCounter {
        self.merge(rhs)
    }
}

impl AddAssign for EvalCounter {
    fn add_assign(&mut self, rhs: EvalCounter) {
        self.count += rhs.count;
    }
}

impl Sum for EvalCounter {
    fn sum<I: Iterator<Item = EvalCounter>>(iter: I) -> Self {
        iter.fold(EvalCounter::new(), EvalCounter::merge)
    }
}

/// Structural constants attached to a problem.
///
/// `sigma1`, `sigma2`, `tau2` bound the gradient variance and the second/fourth moments
/// of the Hessian deviation across components; they are only needed by
/// [`theoretical_params`](crate::optimizer::theoretical_params).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemMetadata {
    pub rank_bound: usize,
    pub hessian_lipschitz: Option<f64>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    pub tau2: Option<f64>,
}

impl ProblemMetadata {
    pub fn black_box(n: usize) -> Self {
        Self {
            rank_bound: n,
            hessian_lipschitz: None,
            sigma1: None,
            sigma2: None,
            tau2: None,
        }
    }
}

/// `F(x) = (1/N) Σ_ξ f(x; ξ)`.
pub trait FiniteSumProblem: Sync {
    fn dim(&self) -> usize;

    fn num_components(&self) -> usize;

    /// Raw component value. Callers are expected to have validated `x` and `xi`;
    /// budgeted code paths go through [`eval_component`].
    fn component_value(&self, x: &DVector<f64>, xi: usize) -> f64;

    fn component_gradient(&self, _x: &DVector<f64>, _xi: usize) -> Option<DVector<f64>> {
        None
    }

    fn component_hessian(&self, _x: &DVector<f64>, _xi: usize) -> Option<DMatrix<f64>> {
        None
    }

    fn metadata(&self) -> ProblemMetadata;

    /// Hessian Lipschitz constant of a single component; defaults to the problem-wide one.
    fn component_hessian_lipschitz(&self, _xi: usize) -> Option<f64> {
        self.metadata().hessian_lipschitz
    }
}

fn check_point<P: FiniteSumProblem + ?Sized>(problem: &P, x: &DVector<f64>) -> Result<()> {
    if x.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

fn check_component<P: FiniteSumProblem + ?Sized>(problem: &P, xi: usize) -> Result<()> {
    if xi >= problem.num_components() {
        return Err(Error::ComponentOutOfRange {
            index: xi,
            count: problem.num_components(),
        });
    }
    Ok(())
}

/// `f(x; ξ)`, counted as one evaluation.
pub fn eval_component<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    xi: usize,
    counter: &mut EvalCounter,
) -> Result<f64> {
    check_point(problem, x)?;
    check_component(problem, xi)?;
    counter.record(1);
    Ok(problem.component_value(x, xi))
}

/// `F(x)`, counted as `N` evaluations.
pub fn full_objective<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    counter: &mut EvalCounter,
) -> Result<f64> {
    check_point(problem, x)?;
    let n = problem.num_components();
    counter.record(n as u64);
    Ok(objective_uncounted(problem, x))
}

/// `F(x)` without touching any budget. Used for progress reporting only.
pub(crate) fn objective_uncounted<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
) -> f64 {
    let n = problem.num_components();
    (0..n).map(|xi| problem.component_value(x, xi)).sum::<f64>() / n as f64
}

pub fn analytic_gradient<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    xi: usize,
) -> Result<DVector<f64>> {
    check_point(problem, x)?;
    check_component(problem, xi)?;
    problem
        .component_gradient(x, xi)
        .ok_or(Error::Unsupported("analytic gradient"))
}

pub fn analytic_hessian<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    xi: usize,
) -> Result<DMatrix<f64>> {
    check_point(problem, x)?;
    check_component(problem, xi)?;
    problem
        .component_hessian(x, xi)
        .ok_or(Error::Unsupported("analytic hessian"))
}

/// `∇F(x)` from the analytic oracle.
pub fn analytic_full_gradient<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_point(problem, x)?;
    let n = problem.num_components();
    let mut g = DVector::zeros(problem.dim());
    for xi in 0..n {
        g += problem
            .component_gradient(x, xi)
            .ok_or(Error::Unsupported("analytic gradient"))?;
    }
    Ok(g / n as f64)
}

/// `∇²F(x)` from the analytic oracle.
pub fn analytic_full_hessian<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_point(problem, x)?;
    let n = problem.num_components();
    let d = problem.dim();
    let mut h = DMatrix::zeros(d, d);
    for xi in 0..n {
        h += problem
            .component_hessian(x, xi)
            .ok_or(Error::Unsupported("analytic hessian"))?;
    }
    Ok(h / n as f64)
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    Positive,
    Negative,
    Target(f64),
}

impl Label {
    /// `±1` for class labels, the target itself for regression labels.
    pub fn value(&self) -> f64 {
        match *self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
            Label::Target(b) => b,
        }
    }

    pub fn is_class(&self) -> bool {
        !matches!(self, Label::Target(_))
    }

    pub fn from_sign(s: f64) -> Option<Label> {
        if s == 1.0 {
            Some(Label::Positive)
        } else if s == -1.0 {
            Some(Label::Negative)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub features: DVector<f64>,
    pub label: Label,
}

impl DatasetRecord {
    pub fn new(features: DVector<f64>, label: Label) -> Self {
        Self { features, label }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

/// How to read a CSV file into [`DatasetRecord`]s.
///
/// When `class_map` is empty the label column is parsed as a real regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub has_header: bool,
    pub label_column: ColumnRef,
    /// `None` selects every column except the label.
    pub feature_columns: Option<Vec<ColumnRef>>,
    pub class_map: Vec<(String, Label)>,
}

impl CsvSchema {
    /// Iris with "Iris-setosa" as the positive class and the other two species merged
    /// into the negative class.
    pub fn iris() -> Self {
        Self {
            has_header: true,
            label_column: ColumnRef::Name("species".into()),
            feature_columns: None,
            class_map: vec![
                ("Iris-setosa".into(), Label::Positive),
                ("Iris-versicolor".into(), Label::Negative),
                ("Iris-virginica".into(), Label::Negative),
            ],
        }
    }
}

fn resolve_column(col: &ColumnRef, header: Option<&csv::StringRecord>, width: usize) -> Result<usize> {
    match col {
        ColumnRef::Index(i) if *i < width => Ok(*i),
        ColumnRef::Index(i) => Err(Error::Schema(format!(
            "column index {i} out of range for {width} columns"
        ))),
        ColumnRef::Name(name) => {
            let header = header.ok_or_else(|| {
                Error::Schema(format!("column '{name}' referenced by name but file has no header"))
            })?;
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
        }
    }
}

/// Reads a comma-separated file. Row numbers in errors are 1-based file lines.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Vec<DatasetRecord>> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: shown.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut rows = reader.records().enumerate();
    let header = if schema.has_header {
        match rows.next() {
            Some((_, rec)) => Some(rec.map_err(|e| Error::Parse {
                path: shown.clone(),
                row: 1,
                message: e.to_string(),
            })?),
            None => return Err(Error::invalid(format!("{shown}: empty file"))),
        }
    } else {
        None
    };

    let mut records = Vec::new();
    let mut layout: Option<(usize, Vec<usize>, usize)> = None;
    for (idx, rec) in rows {
        let row = idx + 1;
        let rec = rec.map_err(|e| Error::Parse {
            path: shown.clone(),
            row,
            message: e.to_string(),
        })?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if layout.is_none() {
            let width = header.as_ref().map_or(rec.len(), |h| h.len());
            let label = resolve_column(&schema.label_column, header.as_ref(), width)?;
            let features = match &schema.feature_columns {
                Some(cols) => cols
                    .iter()
                    .map(|c| resolve_column(c, header.as_ref(), width))
                    .collect::<Result<Vec<_>>>()?,
                None => (0..width).filter(|&c| c != label).collect(),
            };
            if features.is_empty() {
                return Err(Error::Schema("no feature columns selected".into()));
            }
            layout = Some((label, features, width));
        }
        let (label_col, feature_cols, width) = layout.as_ref().unwrap();
        if rec.len() != *width {
            return Err(Error::Parse {
                path: shown.clone(),
                row,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let mut features = DVector::zeros(feature_cols.len());
        for (k, &c) in feature_cols.iter().enumerate() {
            features[k] = rec[c].parse::<f64>().map_err(|_| Error::Parse {
                path: shown.clone(),
                row,
                message: format!("column {c}: '{}' is not a number", &rec[c]),
            })?;
        }
        let raw = &rec[*label_col];
        let label = if schema.class_map.is_empty() {
            Label::Target(raw.parse::<f64>().map_err(|_| Error::Parse {
                path: shown.clone(),
                row,
                message: format!("label '{raw}' is not a number"),
            })?)
        } else {
            schema
                .class_map
                .iter()
                .find(|(name, _)| name == raw)
                .map(|(_, l)| *l)
                .ok_or_else(|| Error::Parse {
                    path: shown.clone(),
                    row,
                    message: format!("label '{raw}' not in class map"),
                })?
        };
        records.push(DatasetRecord { features, label });
    }
    if records.is_empty() {
        return Err(Error::invalid(format!("{shown}: no data rows")));
    }
    Ok(records)
}

/// Shifts and scales every feature to zero mean and unit (population) variance.
/// Constant features are centred but left unscaled.
pub fn standardize(records: &mut [DatasetRecord]) {
    let Some(first) = records.first() else {
        return;
    };
    let n = first.features.len();
    let count = records.len() as f64;
    let mut mean = DVector::zeros(n);
    for r in records.iter() {
        mean += &r.features;
    }
    mean /= count;
    let mut var = DVector::<f64>::zeros(n);
    for r in records.iter() {
        let d = &r.features - &mean;
        var += d.component_mul(&d);
    }
    var /= count;
    for r in records.iter_mut() {
        for j in 0..n {
            let sd = var[j].sqrt();
            r.features[j] -= mean[j];
            if sd > 0.0 {
                r.features[j] /= sd;
            }
        }
    }
}

fn check_records(records: &[DatasetRecord], classes: bool) -> Result<usize> {
    let first = records
        .first()
        .ok_or_else(|| Error::invalid("dataset has no records"))?;
    let n = first.features.len();
    if n == 0 {
        return Err(Error::invalid("records have no features"));
    }
    for r in records {
        if r.features.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: r.features.len(),
            });
        }
        if classes != r.label.is_class() {
            return Err(Error::invalid(if classes {
                "logistic regression needs ±1 class labels"
            } else {
                "linear regression needs real targets"
            }));
        }
    }
    Ok(n)
}

/// Spectral norm of a symmetric matrix.
fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    a.singular_values().max()
}

/// Moment constants `(σ₂, τ₂)` for a fixed family of component Hessians.
fn hessian_moments(hessians: &[DMatrix<f64>]) -> (f64, f64) {
    let count = hessians.len() as f64;
    let mean = hessians.iter().fold(DMatrix::zeros(hessians[0].nrows(), hessians[0].ncols()), |acc, h| acc + h)
        / count;
    let devs: Vec<f64> = hessians.iter().map(|h| spectral_norm(&(h - &mean))).collect();
    let m2 = devs.iter().map(|d| d * d).sum::<f64>() / count;
    let m4 = devs.iter().map(|d| d.powi(4)).sum::<f64>() / count;
    (m2.sqrt(), m4.powf(0.25))
}

// ---------------------------------------------------------------------------
// Linear regression: f(x; ξ) = (b_ξ − z_ξᵀx)²
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LinearRegression {
    features: Vec<DVector<f64>>,
    targets: Vec<f64>,
    metadata: ProblemMetadata,
}

impl LinearRegression {
    pub fn new(records: &[DatasetRecord]) -> Result<Self> {
        let n = check_records(records, false)?;
        let features: Vec<_> = records.iter().map(|r| r.features.clone()).collect();
        let targets: Vec<_> = records.iter().map(|r| r.label.value()).collect();
        let hessians: Vec<_> = features.iter().map(|z| z * z.transpose() * 2.0).collect();
        let (sigma2, tau2) = hessian_moments(&hessians);
        Ok(Self {
            features,
            targets,
            metadata: ProblemMetadata {
                rank_bound: 1.min(n),
                hessian_lipschitz: Some(0.0),
                // the gradient spread grows with ‖x‖, so no uniform bound exists
                sigma1: None,
                sigma2: Some(sigma2),
                tau2: Some(tau2),
            },
        })
    }
}

impl FiniteSumProblem for LinearRegression {
    fn dim(&self) -> usize {
        self.features[0].len()
    }

    fn num_components(&self) -> usize {
        self.features.len()
    }

    fn component_value(&self, x: &DVector<f64>, xi: usize) -> f64 {
        let r = self.targets[xi] - self.features[xi].dot(x);
        r * r
    }

    fn component_gradient(&self, x: &DVector<f64>, xi: usize) -> Option<DVector<f64>> {
        let z = &self.features[xi];
        Some(z * (2.0 * (z.dot(x) - self.targets[xi])))
    }

    fn component_hessian(&self, _x: &DVector<f64>, xi: usize) -> Option<DMatrix<f64>> {
        let z = &self.features[xi];
        Some(z * z.transpose() * 2.0)
    }

    fn metadata(&self) -> ProblemMetadata {
        self.metadata
    }
}

// ---------------------------------------------------------------------------
// Logistic regression: f(x; ξ) = log(1 + exp(−y_ξ z_ξᵀx))
// ---------------------------------------------------------------------------

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^{-t})` without overflow.
fn logistic_loss(t: f64) -> f64 {
    (-t).max(0.0) + (-t.abs()).exp().ln_1p()
}

#[derive(Debug, Clone)]
pub struct LogisticRegression {
    features: Vec<DVector<f64>>,
    labels: Vec<f64>,
    lipschitz: Vec<f64>,
    metadata: ProblemMetadata,
}

impl LogisticRegression {
    pub fn new(records: &[DatasetRecord]) -> Result<Self> {
        let n = check_records(records, true)?;
        let features: Vec<_> = records.iter().map(|r| r.features.clone()).collect();
        let labels: Vec<_> = records.iter().map(|r| r.label.value()).collect();
        let lipschitz: Vec<f64> = features
            .iter()
            .map(|z| LOGISTIC_THIRD_DERIVATIVE_BOUND * z.norm().powi(3))
            .collect();
        let count = features.len() as f64;
        let sq: Vec<f64> = features.iter().map(|z| z.norm_squared()).collect();
        // E‖X − EX‖² ≤ E‖X‖² with ‖∇f‖ ≤ ‖z‖ and ‖∇²f‖ ≤ ‖z‖²/4; the fourth moment uses
        // (a+b)⁴ ≤ 8(a⁴+b⁴) together with Jensen.
        let sigma1 = (sq.iter().sum::<f64>() / count).sqrt();
        let sigma2 = (sq.iter().map(|s| s * s / 16.0).sum::<f64>() / count).sqrt();
        let tau2 = (16.0 * sq.iter().map(|s| s.powi(4) / 256.0).sum::<f64>() / count).powf(0.25);
        Ok(Self {
            metadata: ProblemMetadata {
                rank_bound: 1.min(n),
                hessian_lipschitz: Some(lipschitz.iter().copied().fold(0.0, f64::max)),
                sigma1: Some(sigma1),
                sigma2: Some(sigma2),
                tau2: Some(tau2),
            },
            features,
            labels,
            lipschitz,
        })
    }

    fn margin(&self, x: &DVector<f64>, xi: usize) -> f64 {
        self.labels[xi] * self.features[xi].dot(x)
    }
}

impl FiniteSumProblem for LogisticRegression {
    fn dim(&self) -> usize {
        self.features[0].len()
    }

    fn num_components(&self) -> usize {
        self.features.len()
    }

    fn component_value(&self, x: &DVector<f64>, xi: usize) -> f64 {
        logistic_loss(self.margin(x, xi))
    }

    fn component_gradient(&self, x: &DVector<f64>, xi: usize) -> Option<DVector<f64>> {
        let t = self.margin(x, xi);
        Some(&self.features[xi] * (-self.labels[xi] * sigmoid(-t)))
    }

    fn component_hessian(&self, x: &DVector<f64>, xi: usize) -> Option<DMatrix<f64>> {
        let s = sigmoid(self.margin(x, xi));
        let z = &self.features[xi];
        Some(z * z.transpose() * (s * (1.0 - s)))
    }

    fn metadata(&self) -> ProblemMetadata {
        self.metadata
    }

    fn component_hessian_lipschitz(&self, xi: usize) -> Option<f64> {
        Some(self.lipschitz[xi])
    }
}

// ---------------------------------------------------------------------------
// Quadratic components: f(x; ξ) = ½ xᵀA_ξx + b_ξᵀx + c_ξ
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct QuadraticSum {
    hessians: Vec<DMatrix<f64>>,
    linear: Vec<DVector<f64>>,
    offsets: Vec<f64>,
    metadata: ProblemMetadata,
}

impl QuadraticSum {
    /// Each term is `(A_ξ, b_ξ, c_ξ)`; `A_ξ` is symmetrised.
    pub fn new(terms: Vec<(DMatrix<f64>, DVector<f64>, f64)>) -> Result<Self> {
        let n = terms
            .first()
            .ok_or_else(|| Error::invalid("no quadratic terms"))?
            .1
            .len();
        let mut hessians = Vec::with_capacity(terms.len());
        let mut linear = Vec::with_capacity(terms.len());
        let mut offsets = Vec::with_capacity(terms.len());
        for (a, b, c) in terms {
            if a.nrows() != n || a.ncols() != n || b.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: b.len(),
                });
            }
            hessians.push(crate::linalg::symmetrize(&a));
            linear.push(b);
            offsets.push(c);
        }
        let rank_bound = hessians
            .iter()
            .map(|h| crate::linalg::numerical_rank(h, 1e-12))
            .max()
            .unwrap_or(0);
        let (sigma2, tau2) = hessian_moments(&hessians);
        Ok(Self {
            hessians,
            linear,
            offsets,
            metadata: ProblemMetadata {
                rank_bound,
                hessian_lipschitz: Some(0.0),
                sigma1: None,
                sigma2: Some(sigma2),
                tau2: Some(tau2),
            },
        })
    }

    /// Single component `½‖x‖²`.
    pub fn half_norm_squared(n: usize) -> Result<Self> {
        Self::new(vec![(DMatrix::identity(n, n), DVector::zeros(n), 0.0)])
    }
}

impl FiniteSumProblem for QuadraticSum {
    fn dim(&self) -> usize {
        self.linear[0].len()
    }

    fn num_components(&self) -> usize {
        self.hessians.len()
    }

    fn component_value(&self, x: &DVector<f64>, xi: usize) -> f64 {
        0.5 * x.dot(&(&self.hessians[xi] * x)) + self.linear[xi].dot(x) + self.offsets[xi]
    }

    fn component_gradient(&self, x: &DVector<f64>, xi: usize) -> Option<DVector<f64>> {
        Some(&self.hessians[xi] * x + &self.linear[xi])
    }

    fn component_hessian(&self, _x: &DVector<f64>, xi: usize) -> Option<DMatrix<f64>> {
        Some(self.hessians[xi].clone())
    }

    fn metadata(&self) -> ProblemMetadata {
        self.metadata
    }
}

// ---------------------------------------------------------------------------
// Black-box objective built from a closure
// ---------------------------------------------------------------------------

/// Objective known only through evaluations; analytic oracles are unavailable.
pub struct BlackBox<F> {
    dim: usize,
    components: usize,
    func: F,
    metadata: ProblemMetadata,
}

impl<F> BlackBox<F>
where
    F: Fn(&DVector<f64>, usize) -> f64 + Sync,
{
    pub fn new(dim: usize, components: usize, func: F) -> Self {
        Self {
            dim,
            components,
            func,
            metadata: ProblemMetadata::black_box(dim),
        }
    }

    pub fn with_metadata(mut self, metadata: ProblemMetadata) -> Self {
        self.metadata = metadata;
        self
    }
}

impl<F> FiniteSumProblem for BlackBox<F>
where
    F: Fn(&DVector<f64>, usize) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_components(&self) -> usize {
        self.components
    }

    fn component_value(&self, x: &DVector<f64>, xi: usize) -> f64 {
        (self.func)(x, xi)
    }

    fn metadata(&self) -> ProblemMetadata {
        self.metadata
    }
}

// ---------------------------------------------------------------------------
// Linear network, one layer free: f(W_i; ξ) = ‖W_L ⋯ W_1 z_ξ − y_ξ‖²
// ---------------------------------------------------------------------------

/// Least-squares loss of a linear (identity-activation) network, optimised over the
/// row-stacked entries of one layer while the others stay fixed.
#[derive(Debug, Clone)]
pub struct LinearNetwork {
    dims: Vec<usize>,
    layer: usize,
    /// `W_L ⋯ W_{i+1}` (`d_L × d_i`), identity when `i = L`.
    after: DMatrix<f64>,
    /// `W_{i−1} ⋯ W_1 z_ξ` per record.
    hidden: Vec<DVector<f64>>,
    targets: Vec<DVector<f64>>,
    initial: DVector<f64>,
    metadata: ProblemMetadata,
}

/// Builds the layer-`layer` subproblem (1-based) of a linear network with widths
/// `dims = [d₀, …, d_L]` and weights `W_1, …, W_L` (`W_k` is `d_k × d_{k−1}`).
///
/// Records pair an input `z ∈ ℝ^{d₀}` with a target `y ∈ ℝ^{d_L}`.
pub fn make_linear_nn(
    dims: &[usize],
    weights: &[DMatrix<f64>],
    layer: usize,
    records: &[(DVector<f64>, DVector<f64>)],
) -> Result<LinearNetwork> {
    if dims.len() < 2 {
        return Err(Error::invalid("need at least one layer"));
    }
    let depth = dims.len() - 1;
    if weights.len() != depth {
        return Err(Error::invalid(format!(
            "{} weight matrices for {} layers",
            weights.len(),
            depth
        )));
    }
    if layer == 0 || layer > depth {
        return Err(Error::invalid(format!("layer {layer} outside 1..={depth}")));
    }
    if dims.contains(&0) {
        return Err(Error::invalid("zero layer width"));
    }
    for (k, w) in weights.iter().enumerate() {
        if w.nrows() != dims[k + 1] || w.ncols() != dims[k] {
            return Err(Error::invalid(format!(
                "W_{} is {}x{}, expected {}x{}",
                k + 1,
                w.nrows(),
                w.ncols(),
                dims[k + 1],
                dims[k]
            )));
        }
    }
    if records.is_empty() {
        return Err(Error::invalid("no records"));
    }
    let mut after = DMatrix::identity(dims[layer], dims[layer]);
    for w in &weights[layer..] {
        after = w * after;
    }
    let mut hidden = Vec::with_capacity(records.len());
    let mut targets = Vec::with_capacity(records.len());
    for (z, y) in records {
        if z.len() != dims[0] || y.len() != dims[depth] {
            return Err(Error::invalid("record shape does not match network"));
        }
        let mut h = z.clone();
        for w in &weights[..layer - 1] {
            h = w * h;
        }
        hidden.push(h);
        targets.push(y.clone());
    }
    let w = &weights[layer - 1];
    let initial = DVector::from_iterator(w.len(), w.transpose().iter().copied());
    let rank_bound = dims[layer..].iter().copied().min().unwrap();
    let gram = after.transpose() * &after;
    let hessians: Vec<_> = hidden
        .iter()
        .map(|h| crate::linalg::kronecker(&gram, &(h * h.transpose())) * 2.0)
        .collect();
    let (sigma2, tau2) = hessian_moments(&hessians);
    Ok(LinearNetwork {
        dims: dims.to_vec(),
        layer,
        after,
        hidden,
        targets,
        initial,
        metadata: ProblemMetadata {
            rank_bound,
            hessian_lipschitz: Some(0.0),
            sigma1: None,
            sigma2: Some(sigma2),
            tau2: Some(tau2),
        },
    })
}

impl LinearNetwork {
    /// `vec_r(W_i)` of the weights supplied at construction.
    pub fn initial_point(&self) -> &DVector<f64> {
        &self.initial
    }

    fn unstack(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dims[self.layer], self.dims[self.layer - 1], x.as_slice())
    }

    fn residual(&self, x: &DVector<f64>, xi: usize) -> DVector<f64> {
        &self.after * (self.unstack(x) * &self.hidden[xi]) - &self.targets[xi]
    }
}

impl FiniteSumProblem for LinearNetwork {
    fn dim(&self) -> usize {
        self.dims[self.layer] * self.dims[self.layer - 1]
    }

    fn num_components(&self) -> usize {
        self.hidden.len()
    }

    fn component_value(&self, x: &DVector<f64>, xi: usize) -> f64 {
        self.residual(x, xi).norm_squared()
    }

    fn component_gradient(&self, x: &DVector<f64>, xi: usize) -> Option<DVector<f64>> {
        let g = (self.after.transpose() * self.residual(x, xi)) * self.hidden[xi].transpose() * 2.0;
        Some(DVector::from_iterator(g.len(), g.transpose().iter().copied()))
    }

    fn component_hessian(&self, _x: &DVector<f64>, xi: usize) -> Option<DMatrix<f64>> {
        let h = &self.hidden[xi];
        let gram = self.after.transpose() * &self.after;
        Some(crate::linalg::kronecker(&gram, &(h * h.transpose())) * 2.0)
    }

    fn metadata(&self) -> ProblemMetadata {
        self.metadata
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn lin(z: &[f64], b: f64) -> DatasetRecord {
        DatasetRecord::new(DVector::from_column_slice(z), Label::Target(b))
    }

    fn cls(z: &[f64], y: Label) -> DatasetRecord {
        DatasetRecord::new(DVector::from_column_slice(z), y)
    }

    #[test]
    fn eval_component_examples() {
        let p = LinearRegression::new(&[lin(&[1.0, 0.0], 0.0)]).unwrap();
        let mut c = EvalCounter::new();
        assert_eq!(eval_component(&p, &dvector![2.0, 3.0], 0, &mut c).unwrap(), 4.0);
        assert_eq!(c.count(), 1);

        let p = LogisticRegression::new(&[cls(&[1.0, 0.0], Label::Positive)]).unwrap();
        let v = eval_component(&p, &dvector![0.0, 0.0], 0, &mut c).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);

        let p = LogisticRegression::new(&[cls(&[2.0, 1.0], Label::Negative)]).unwrap();
        let v = eval_component(&p, &dvector![1.0, -1.0], 0, &mut c).unwrap();
        assert!((v - 1.0f64.exp().ln_1p()).abs() < 1e-15);
        assert!((v - 1.313262).abs() < 1e-6);
        assert_eq!(c.count(), 3);
    }

    #[test]
    fn eval_component_rejects_bad_input() {
        let p = LinearRegression::new(&[lin(&[1.0, 0.0], 0.0)]).unwrap();
        let mut c = EvalCounter::new();
        assert!(matches!(
            eval_component(&p, &dvector![1.0], 0, &mut c),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            eval_component(&p, &dvector![1.0, 2.0], 1, &mut c),
            Err(Error::ComponentOutOfRange { .. })
        ));
        assert_eq!(c.count(), 0);
    }

    #[test]
    fn full_objective_examples() {
        let p = LinearRegression::new(&[lin(&[1.0, 0.0], 1.0), lin(&[0.0, 1.0], -1.0)]).unwrap();
        let mut c = EvalCounter::new();
        assert_eq!(full_objective(&p, &dvector![0.0, 0.0], &mut c).unwrap(), 1.0);
        assert_eq!(c.count(), 2);

        let single = LinearRegression::new(&[lin(&[1.0, 2.0], 0.5)]).unwrap();
        let x = dvector![0.3, -0.7];
        let mut c1 = EvalCounter::new();
        let mut c2 = EvalCounter::new();
        assert_eq!(
            full_objective(&single, &x, &mut c1).unwrap(),
            eval_component(&single, &x, 0, &mut c2).unwrap()
        );
    }

    #[test]
    fn analytic_gradient_examples() {
        let p = LinearRegression::new(&[lin(&[1.0, 0.0], 0.0)]).unwrap();
        assert_eq!(analytic_gradient(&p, &dvector![2.0, 3.0], 0).unwrap(), dvector![4.0, 0.0]);

        let p = LogisticRegression::new(&[cls(&[1.0, 0.0], Label::Positive)]).unwrap();
        assert_eq!(analytic_gradient(&p, &dvector![0.0, 0.0], 0).unwrap(), dvector![-0.5, 0.0]);

        let p = LogisticRegression::new(&[cls(&[0.0, 0.0], Label::Negative)]).unwrap();
        assert_eq!(analytic_gradient(&p, &dvector![0.4, 2.0], 0).unwrap().norm(), 0.0);
    }

    #[test]
    fn analytic_hessian_examples() {
        let p = LinearRegression::new(&[lin(&[1.0, 2.0], 0.0)]).unwrap();
        let h = analytic_hessian(&p, &dvector![0.0, 0.0], 0).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[2.0, 4.0, 4.0, 8.0]));

        let p = LogisticRegression::new(&[cls(&[1.0, 0.0], Label::Positive)]).unwrap();
        let h = analytic_hessian(&p, &dvector![0.0, 0.0], 0).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[0.25, 0.0, 0.0, 0.0]));

        let p = LogisticRegression::new(&[cls(&[0.0, 0.0], Label::Positive)]).unwrap();
        assert_eq!(analytic_hessian(&p, &dvector![1.0, 1.0], 0).unwrap().norm(), 0.0);
    }

    #[test]
    fn black_box_has_no_oracles() {
        let p = BlackBox::new(2, 1, |x: &DVector<f64>, _| x[0] * x[1]);
        assert!(matches!(
            analytic_gradient(&p, &dvector![1.0, 1.0], 0),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            analytic_hessian(&p, &dvector![1.0, 1.0], 0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn counter_merge_is_a_sum() {
        let mut a = EvalCounter::new();
        a.record(3);
        let mut b = EvalCounter::new();
        b.record(5);
        assert_eq!((a + b).count(), 8);
        assert_eq!(a.merge(b), b.merge(a));
        let total: EvalCounter = vec![a, b, a].into_iter().sum();
        assert_eq!(total.count(), 11);
    }

    #[test]
    fn linear_nn_single_layer_is_stacked_regression() {
        let w = DMatrix::from_row_slice(1, 3, &[0.5, -1.0, 2.0]);
        let z = dvector![1.0, 2.0, 3.0];
        let y = dvector![0.7];
        let net = make_linear_nn(&[3, 1], &[w], 1, &[(z.clone(), y)]).unwrap();
        let reg = LinearRegression::new(&[DatasetRecord::new(z, Label::Target(0.7))]).unwrap();
        let x = dvector![0.1, 0.2, -0.3];
        assert!((net.component_value(&x, 0) - reg.component_value(&x, 0)).abs() < 1e-14);
        assert!((net.component_hessian(&x, 0).unwrap() - reg.component_hessian(&x, 0).unwrap()).norm() < 1e-14);
    }

    #[test]
    fn linear_nn_rejects_bad_shapes() {
        let w1 = DMatrix::zeros(2, 2);
        let w2 = DMatrix::zeros(2, 1);
        let rec = (dvector![1.0, 1.0], dvector![1.0]);
        assert!(make_linear_nn(&[2, 2, 1], &[w1, w2], 1, &[rec]).is_err());
    }

    #[test]
    fn linear_nn_zero_input_has_zero_hessian() {
        let w1 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let w2 = DMatrix::from_row_slice(1, 2, &[0.3, 1.1]);
        let net = make_linear_nn(&[2, 2, 1], &[w1, w2], 1, &[(dvector![0.0, 0.0], dvector![1.0])]).unwrap();
        let h = net.component_hessian(net.initial_point(), 0).unwrap();
        assert_eq!(h.norm(), 0.0);
        assert_eq!(net.metadata().rank_bound, 1);
    }
}

//! Flat `key = value` run configuration with dotted sections (`cubic.m1 = 5`).
//!
//! Parsing is strict: every key must be known and applicable, appear once, and hold a
//! value of the right type. Blank lines and `#` comments are ignored. Relative paths
//! are resolved against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use zocubic::{
    ColumnRef, CsvSchema, CubicNewtonConfig, Feasibility, Label, MeasurementScheme, SolverConfig,
    ZoSgdConfig,
};

use crate::error::{HarnessError, Result};

/// Default dataset of the `iris` problem, relative to the working directory.
pub const IRIS_DEFAULT_PATH: &str = "data/iris.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    RecoverBench,
    Optimize,
    Compare,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::RecoverBench => "recover-bench",
            Experiment::Optimize => "optimize",
            Experiment::Compare => "compare",
        }
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "recover-bench" => Ok(Experiment::RecoverBench),
            "optimize" => Ok(Experiment::Optimize),
            "compare" => Ok(Experiment::Compare),
            _ => Err("one of recover-bench, optimize, compare".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    Logistic,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartPoint {
    Zero,
    /// Standard Gaussian draw determined by the run seed, shared by all algorithms.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Dataset {
        path: PathBuf,
        schema: CsvSchema,
        loss: Loss,
        standardize: bool,
    },
    /// Logistic regression on Gaussian features labelled by a fixed teacher vector.
    SyntheticLogistic { dim: usize, samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdSection {
    /// Template for every ZO-SGD run; `step_size` and `seed` are set per run.
    pub base: ZoSgdConfig,
    pub step_sizes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSection {
    /// Shared evaluation budget; replaces the iteration counts when set.
    pub budget: Option<u64>,
    /// Number of summary checkpoints after the starting point.
    pub checkpoints: usize,
    pub plot_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSection {
    pub dims: Vec<usize>,
    pub ranks: Vec<usize>,
    /// `None` uses `6nr` per cell.
    pub measurements: Option<Vec<usize>>,
    pub schemes: Vec<MeasurementScheme>,
    pub success_tol: f64,
    /// When false, `wall_ms` is written as 0 so reruns are byte-identical.
    pub timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheorySection {
    pub eta: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    /// Objective of optimizer experiments; recovery benchmarks have none.
    pub problem: Option<ProblemSpec>,
    pub start: StartPoint,
    /// Cubic Newton template; `seed` is set per run.
    pub cubic: CubicNewtonConfig,
    pub sgd: SgdSection,
    pub compare: CompareSection,
    pub bench: BenchSection,
    /// When set, the cubic schedule comes from the theoretical parameter mapper.
    pub theory: Option<TheorySection>,
}

impl RunConfig {
    pub fn problem_spec(&self) -> Result<&ProblemSpec> {
        self.problem
            .as_ref()
            .ok_or_else(|| HarnessError::config(format!("experiment {} has no problem", self.experiment.name())))
    }

    /// Replaces the measurement scheme of cubic runs and benchmark grids.
    pub fn set_scheme(&mut self, scheme: MeasurementScheme) {
        self.cubic.scheme = scheme;
        self.bench.schemes = vec![scheme];
    }
}

/// Parses `a..b` (half-open) or a comma-separated list into a nonempty seed list.
pub fn parse_seeds(s: &str) -> std::result::Result<Vec<u64>, String> {
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad range start '{a}'"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad range end '{b}'"))?;
        (a..b).collect()
    } else {
        list_items(s)
            .map(|v| v.parse().map_err(|_| format!("bad seed '{v}'")))
            .collect::<std::result::Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(format!("seed list '{s}' is empty"));
    }
    Ok(seeds)
}

fn list_items(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|v| !v.is_empty())
}

fn column_ref(s: &str) -> ColumnRef {
    match s.parse::<usize>() {
        Ok(i) => ColumnRef::Index(i),
        Err(_) => ColumnRef::Name(s.to_string()),
    }
}

/// `name:+1, other:-1` class table.
fn parse_classes(s: &str) -> std::result::Result<Vec<(String, Label)>, String> {
    let map: Vec<(String, Label)> = list_items(s)
        .map(|item| {
            let (name, sign) = item
                .rsplit_once(':')
                .ok_or_else(|| format!("class entry '{item}' is not name:+1 or name:-1"))?;
            let label = match sign.trim() {
                "+1" | "1" => Label::Positive,
                "-1" => Label::Negative,
                other => return Err(format!("class sign '{other}' is not +1 or -1")),
            };
            Ok((name.trim().to_string(), label))
        })
        .collect::<std::result::Result<_, _>>()?;
    if map.is_empty() {
        return Err("class table is empty".into());
    }
    Ok(map)
}

struct Entry {
    line: usize,
    value: String,
}

/// Raw entries; typed accessors remove what they read so leftovers are unknown keys.
struct Entries {
    items: BTreeMap<String, Entry>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut items: BTreeMap<String, Entry> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                HarnessError::config(format!("line {line}: expected `key = value`, got `{content}`"))
            })?;
            let key = key.trim();
            if key.is_empty() || key.split('.').any(|part| part.is_empty()) {
                return Err(HarnessError::config(format!("line {line}: malformed key `{key}`")));
            }
            if let Some(prev) = items.get(key) {
                return Err(HarnessError::config(format!(
                    "line {line}: duplicate key `{key}` (first set on line {})",
                    prev.line
                )));
            }
            items.insert(
                key.to_string(),
                Entry {
                    line,
                    value: value.trim().to_string(),
                },
            );
        }
        Ok(Self { items })
    }

    fn has(&self, key: &str) -> bool {
        self.items.contains_key(key)
    }

    fn with<T>(
        &mut self,
        key: &str,
        convert: impl FnOnce(&str) -> std::result::Result<T, String>,
    ) -> Result<Option<T>> {
        let Some(entry) = self.items.remove(key) else {
            return Ok(None);
        };
        convert(&entry.value).map(Some).map_err(|why| {
            HarnessError::config(format!(
                "line {}: key `{key}`: invalid value `{}`: expected {why}",
                entry.line, entry.value
            ))
        })
    }

    fn get<T: FromStr>(&mut self, key: &str, what: &str) -> Result<Option<T>> {
        self.with(key, |v| v.parse().map_err(|_| what.to_string()))
    }

    fn list<T: FromStr>(&mut self, key: &str, what: &str) -> Result<Option<Vec<T>>> {
        self.with(key, |v| {
            let items: Vec<T> = list_items(v)
                .map(|s| s.parse().map_err(|_| format!("comma-separated list of {what}")))
                .collect::<std::result::Result<_, _>>()?;
            if items.is_empty() {
                Err(format!("nonempty list of {what}"))
            } else {
                Ok(items)
            }
        })
    }

    fn path(&mut self, key: &str, base: &Path) -> Result<Option<PathBuf>> {
        self.with(key, |v| {
            if v.is_empty() {
                Err("a file path".into())
            } else {
                Ok(base.join(v))
            }
        })
    }

    fn finish(self) -> Result<()> {
        match self.items.iter().min_by_key(|(_, e)| e.line) {
            Some((key, entry)) => Err(HarnessError::config(format!(
                "line {}: unknown or inapplicable key `{key}`",
                entry.line
            ))),
            None => Ok(()),
        }
    }
}

const UINT: &str = "a nonnegative integer";
const REAL: &str = "a real number";
const BOOL: &str = "true or false";
const SCHEME: &str = "spherical or gaussian";

/// Reads and validates a run configuration file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::config(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_config_str(&text, base)
}

/// Parses configuration text; relative paths are resolved against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig> {
    let mut e = Entries::parse(text)?;

    let experiment = e
        .with("experiment", |v| v.parse())?
        .ok_or_else(|| HarnessError::config("missing required key `experiment`"))?;
    let seeds = e.with("seeds", parse_seeds)?.unwrap_or_else(|| vec![0]);
    let out = e.path("out", base)?;

    let (problem, start) = match experiment {
        Experiment::RecoverBench => (None, StartPoint::Gaussian),
        _ => {
            let (spec, start) = parse_problem(&mut e, base)?;
            (Some(spec), start)
        }
    };
    let solver = parse_solver(&mut e)?;

    let schedule_keys = ["cubic.m1", "cubic.m2", "cubic.measurements", "cubic.alpha", "cubic.iterations"];
    let theory_eta: Option<f64> = e.get("theory.eta", REAL)?;
    let theory_beta: Option<f64> = e.get("theory.beta", REAL)?;
    let theory = match (theory_eta, theory_beta) {
        (None, None) => None,
        (Some(eta), beta) => {
            if let Some(k) = schedule_keys.iter().find(|k| e.has(k)) {
                return Err(HarnessError::config(format!(
                    "key `{k}` conflicts with `theory.eta`, which sets the cubic schedule"
                )));
            }
            Some(TheorySection {
                eta,
                beta: beta.unwrap_or(0.1),
            })
        }
        (None, Some(_)) => {
            return Err(HarnessError::config("`theory.beta` requires `theory.eta`"));
        }
    };

    let mut cubic = CubicNewtonConfig {
        solver,
        ..CubicNewtonConfig::default()
    };
    if let Some(v) = e.get("cubic.m1", UINT)? {
        cubic.m1 = v;
    }
    if let Some(v) = e.get("cubic.m2", UINT)? {
        cubic.m2 = v;
    }
    if let Some(v) = e.get("cubic.measurements", UINT)? {
        cubic.measurements = v;
    }
    if let Some(v) = e.get("cubic.delta", REAL)? {
        cubic.delta = v;
    }
    if let Some(v) = e.get("cubic.alpha", REAL)? {
        cubic.alpha = v;
    }
    if let Some(v) = e.get("cubic.iterations", UINT)? {
        cubic.iterations = v;
    }
    if let Some(v) = e.get("cubic.scheme", SCHEME)? {
        cubic.scheme = v;
    }
    cubic.eval_budget = e.get("cubic.budget", UINT)?;
    if let Some(v) = e.get("cubic.tol", REAL)? {
        cubic.cubic_tol = v;
    }
    cubic
        .validate()
        .map_err(|err| HarnessError::config(format!("cubic section: {err}")))?;

    let mut sgd = ZoSgdConfig::default();
    if let Some(v) = e.get("sgd.batch", UINT)? {
        sgd.batch = v;
    }
    if let Some(v) = e.get("sgd.delta", REAL)? {
        sgd.delta = v;
    }
    if let Some(v) = e.get("sgd.iterations", UINT)? {
        sgd.iterations = v;
    }
    sgd.eval_budget = e.get("sgd.budget", UINT)?;
    let step_sizes = e.list("sgd.step_sizes", "real numbers")?.unwrap_or_else(|| vec![1.0, 0.1, 0.001]);
    for &gamma in &step_sizes {
        ZoSgdConfig {
            step_size: gamma,
            ..sgd.clone()
        }
        .validate()
        .map_err(|err| HarnessError::config(format!("sgd section: {err}")))?;
    }

    let compare = CompareSection {
        budget: e.get("compare.budget", UINT)?,
        checkpoints: e.get("compare.checkpoints", UINT)?.unwrap_or(10),
        plot_points: e.get("compare.plot_points", UINT)?.unwrap_or(100),
    };
    if compare.checkpoints == 0 || compare.plot_points == 0 {
        return Err(HarnessError::config(
            "`compare.checkpoints` and `compare.plot_points` must be positive",
        ));
    }

    let bench = BenchSection {
        dims: e.list("bench.n", "positive integers")?.unwrap_or_else(|| vec![30]),
        ranks: e.list("bench.r", "nonnegative integers")?.unwrap_or_else(|| vec![1]),
        measurements: e.list("bench.measurements", "positive integers")?,
        schemes: e
            .list("bench.schemes", "schemes (spherical, gaussian)")?
            .unwrap_or_else(|| vec![MeasurementScheme::Gaussian]),
        success_tol: e.get("bench.success_tol", REAL)?.unwrap_or(1e-4),
        timing: e.get("bench.timing", BOOL)?.unwrap_or(true),
    };
    if bench.dims.contains(&0) {
        return Err(HarnessError::config("`bench.n` entries must be positive"));
    }
    if !(bench.success_tol > 0.0) {
        return Err(HarnessError::config("`bench.success_tol` must be positive"));
    }

    e.finish()?;
    Ok(RunConfig {
        experiment,
        seeds,
        out,
        problem,
        start,
        cubic,
        sgd: SgdSection { base: sgd, step_sizes },
        compare,
        bench,
        theory,
    })
}

fn parse_solver(e: &mut Entries) -> Result<SolverConfig> {
    let mut solver = SolverConfig::default();
    if let Some(v) = e.get("solver.rho", REAL)? {
        solver.rho = v;
    }
    if let Some(v) = e.get("solver.tol", REAL)? {
        solver.tol = v;
    }
    if let Some(v) = e.get("solver.max_iter", UINT)? {
        solver.max_iter = v;
    }
    if let Some(v) = e.with("solver.feasibility", |v| match v {
        "auto" => Ok(Feasibility::Auto),
        other => other
            .parse::<f64>()
            .ok()
            .filter(|t| *t >= 0.0)
            .map(Feasibility::Fixed)
            .ok_or_else(|| "`auto` or a nonnegative real".to_string()),
    })? {
        solver.feasibility = v;
    }
    if !(solver.rho > 0.0 && solver.tol > 0.0 && solver.max_iter > 0) {
        return Err(HarnessError::config(
            "`solver.rho`, `solver.tol` and `solver.max_iter` must be positive",
        ));
    }
    Ok(solver)
}

fn parse_problem(e: &mut Entries, base: &Path) -> Result<(ProblemSpec, StartPoint)> {
    let kind = e.get::<String>("problem.kind", "a problem name")?.unwrap_or_else(|| "iris".into());
    let start = e
        .with("problem.x0", |v| match v {
            "zero" => Ok(StartPoint::Zero),
            "gaussian" => Ok(StartPoint::Gaussian),
            _ => Err("zero or gaussian".to_string()),
        })?
        .unwrap_or(StartPoint::Gaussian);

    let spec = match kind.as_str() {
        "iris" | "csv" => {
            let is_iris = kind == "iris";
            let path = match e.path("problem.path", base)? {
                Some(p) => p,
                None if is_iris => PathBuf::from(IRIS_DEFAULT_PATH),
                None => return Err(HarnessError::config("problem.kind = csv requires `problem.path`")),
            };
            if !path.is_file() {
                return Err(HarnessError::config(format!(
                    "key `problem.path`: dataset {} does not exist",
                    path.display()
                )));
            }
            let mut schema = if is_iris {
                CsvSchema::iris()
            } else {
                CsvSchema {
                    has_header: true,
                    label_column: ColumnRef::Index(0),
                    feature_columns: None,
                    class_map: Vec::new(),
                }
            };
            if let Some(h) = e.get("problem.header", BOOL)? {
                schema.has_header = h;
            }
            match e.with("problem.label", |v| Ok::<_, String>(column_ref(v)))? {
                Some(col) => schema.label_column = col,
                None if !is_iris => {
                    return Err(HarnessError::config("problem.kind = csv requires `problem.label`"));
                }
                None => {}
            }
            if let Some(cols) = e.with("problem.features", |v| {
                if v == "all" {
                    Ok(None)
                } else {
                    let cols: Vec<ColumnRef> = list_items(v).map(column_ref).collect();
                    if cols.is_empty() {
                        Err("`all` or a comma-separated list of column names or indices".to_string())
                    } else {
                        Ok(Some(cols))
                    }
                }
            })? {
                schema.feature_columns = cols;
            }
            if let Some(map) = e.with("problem.classes", parse_classes)? {
                schema.class_map = map;
            }
            let loss = e
                .with("problem.loss", |v| match v {
                    "logistic" => Ok(Loss::Logistic),
                    "linear" => Ok(Loss::Linear),
                    _ => Err("logistic or linear".to_string()),
                })?
                .unwrap_or(Loss::Logistic);
            if loss == Loss::Logistic && schema.class_map.is_empty() {
                return Err(HarnessError::config("logistic loss requires `problem.classes`"));
            }
            ProblemSpec::Dataset {
                path,
                schema,
                loss,
                standardize: e.get("problem.standardize", BOOL)?.unwrap_or(true),
            }
        }
        "synthetic-logistic" => {
            let spec = ProblemSpec::SyntheticLogistic {
                dim: e.get("problem.dim", UINT)?.unwrap_or(4),
                samples: e.get("problem.samples", UINT)?.unwrap_or(200),
                seed: e.get("problem.seed", UINT)?.unwrap_or(0),
            };
            if let ProblemSpec::SyntheticLogistic { dim, samples, .. } = spec {
                if dim == 0 || samples == 0 {
                    return Err(HarnessError::config(
                        "`problem.dim` and `problem.samples` must be positive",
                    ));
                }
            }
            spec
        }
        other => {
            return Err(HarnessError::config(format!(
                "key `problem.kind`: unknown problem `{other}` (expected iris, csv or synthetic-logistic)"
            )));
        }
    };
    Ok((spec, start))
}

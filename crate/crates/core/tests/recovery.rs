use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use zocubic::*;

/// Affine constraints `⟨X, Aᵢ⟩ = yᵢ` in full `n²` coordinates, independent of the
/// solver's symmetric parametrisation.
struct Affine {
    n: usize,
    ops: DMatrix<f64>,
    pinv: DMatrix<f64>,
    y: DVector<f64>,
}

impl Affine {
    fn new(n: usize, sensing: &Sensing, y: &[f64]) -> Self {
        let m = sensing.len();
        let ops = DMatrix::from_fn(m, n * n, |i, k| sensing.matrix(i)[(k / n, k % n)]);
        let pinv = ops.clone().pseudo_inverse(1e-12).unwrap();
        Self {
            n,
            ops,
            pinv,
            y: DVector::from_column_slice(y),
        }
    }

    fn project(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let flat = DVector::from_fn(self.n * self.n, |k, _| x[(k / self.n, k % self.n)]);
        let fixed = &flat + &self.pinv * (&self.y - &self.ops * &flat);
        DMatrix::from_fn(self.n, self.n, |i, j| fixed[i * self.n + j])
    }

    fn residual(&self, x: &DMatrix<f64>) -> f64 {
        let flat = DVector::from_fn(self.n * self.n, |k, _| x[(k / self.n, k % self.n)]);
        (&self.ops * flat - &self.y).amax()
    }
}

/// Best symmetric rank-`r` approximation.
fn truncate(x: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let sym = (x + x.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()));
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for &k in order.iter().take(r) {
        let v = eig.eigenvectors.column(k);
        out += v * v.transpose() * eig.eigenvalues[k];
    }
    out
}

/// Alternating projections between the constraint set and rank-`r` matrices.
fn alternating_projection(affine: &Affine, r: usize, start: DMatrix<f64>, iters: usize) -> DMatrix<f64> {
    let mut x = affine.project(&start);
    for _ in 0..iters {
        x = affine.project(&truncate(&x, r));
        if affine.residual(&truncate(&x, r)) < 1e-12 {
            break;
        }
    }
    truncate(&x, r)
}

fn nuclear(x: &DMatrix<f64>) -> f64 {
    x.singular_values().sum()
}

fn rank_target(s: &mut DirectionSampler, r: usize) -> DMatrix<f64> {
    let n = s.dim();
    let mut h = DMatrix::zeros(n, n);
    for k in 0..r {
        let w = s.sample_gaussian();
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        h += &w * w.transpose() * sign;
    }
    h
}

fn gaussian_probes(s: &mut DirectionSampler, target: &DMatrix<f64>, m: usize) -> (Sensing, Vec<f64>) {
    let a: Vec<DVector<f64>> = (0..m).map(|_| s.sample_gaussian()).collect();
    let y = a.iter().map(|a| a.dot(&(target * a))).collect();
    (Sensing::Gaussian(a), y)
}

fn spherical_probes(s: &mut DirectionSampler, target: &DMatrix<f64>, m: usize) -> (Sensing, Vec<f64>) {
    let p: Vec<(DVector<f64>, DVector<f64>)> = (0..m).map(|_| (s.sample_sphere(), s.sample_sphere())).collect();
    let y = p.iter().map(|(u, v)| u.dot(&(target * v))).collect();
    (Sensing::Spherical(p), y)
}

fn exact_config() -> SolverConfig {
    SolverConfig {
        feasibility: Feasibility::Fixed(0.0),
        ..SolverConfig::default()
    }
}

#[test]
fn recovers_e1e1_from_gaussian_probes() {
    let n = 5;
    let mut target = DMatrix::zeros(n, n);
    target[(0, 0)] = 1.0;
    let mut s = DirectionSampler::new(17, n).unwrap();
    let (sensing, y) = gaussian_probes(&mut s, &target, 40);
    let oracle = alternating_projection(&Affine::new(n, &sensing, &y), 1, DMatrix::zeros(n, n), 20_000);
    let rp = RecoveryProblem::new(n, sensing, y, 0.0).unwrap();
    let r = recover(&rp, &SolverConfig::default()).unwrap();
    assert!(r.diagnostics.converged);
    assert!((&oracle - &target).norm() <= 1e-6, "oracle disagrees with the planted matrix");
    assert!((&r.matrix - &target).norm() <= 1e-5);
    assert!((&r.matrix - &oracle).norm() <= 1e-5);
}

#[test]
fn determined_spherical_system_is_solved_exactly() {
    let n = 10;
    let d = n * (n + 1) / 2;
    for seed in 0..3 {
        let mut s = DirectionSampler::new(seed, n).unwrap();
        let target = rank_target(&mut s, 1);
        let (sensing, y) = spherical_probes(&mut s, &target, d);
        // Upper-triangular unknowns: ⟨X, (uvᵀ+vuᵀ)/2⟩ = Σ uᵢvᵢXᵢᵢ + Σ_{i<j} (uᵢvⱼ + uⱼvᵢ)Xᵢⱼ.
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
        let Sensing::Spherical(ref probes) = sensing else { unreachable!() };
        let system = DMatrix::from_fn(d, d, |row, col| {
            let (u, v) = &probes[row];
            let (i, j) = pairs[col];
            if i == j {
                u[i] * v[i]
            } else {
                u[i] * v[j] + u[j] * v[i]
            }
        });
        let coeffs = system.lu().solve(&DVector::from_column_slice(&y)).unwrap();
        let mut oracle = DMatrix::zeros(n, n);
        for (k, &(i, j)) in pairs.iter().enumerate() {
            oracle[(i, j)] = coeffs[k];
            oracle[(j, i)] = coeffs[k];
        }
        let r = recover(&RecoveryProblem::new(n, sensing, y, 0.0).unwrap(), &SolverConfig::default()).unwrap();
        assert!(r.diagnostics.converged);
        assert!((&oracle - &target).norm() <= 1e-8 * target.norm());
        assert!((&r.matrix - &oracle).norm() <= 1e-5 * oracle.norm(), "seed {seed}");
    }
}

/// Smallest nuclear norm among feasible points found by alternating projections at every
/// rank from several starts.
fn rank_sweep_oracle(affine: &Affine, n: usize, s: &mut DirectionSampler) -> f64 {
    let mut best = f64::INFINITY;
    for r in 1..=n {
        for start in 0..3 {
            let x0 = if start == 0 { DMatrix::zeros(n, n) } else { rank_target(s, n) };
            let candidate = alternating_projection(affine, r, x0, 5_000);
            if affine.residual(&candidate) <= 1e-9 * (1.0 + affine.y.amax()) {
                best = best.min(nuclear(&candidate));
            }
        }
    }
    best
}

fn sweep_case(seed: u64, n: usize, rank: usize, m: usize) -> (f64, f64) {
    let mut s = DirectionSampler::new(seed, n).unwrap();
    let target = rank_target(&mut s, rank);
    let (sensing, y) = gaussian_probes(&mut s, &target, m);
    let affine = Affine::new(n, &sensing, &y);
    let best = rank_sweep_oracle(&affine, n, &mut s);
    assert!(best.is_finite(), "oracle found no feasible point");
    let r = recover(&RecoveryProblem::new(n, sensing, y, 0.0).unwrap(), &exact_config()).unwrap();
    assert!(r.diagnostics.converged);
    (nuclear(&r.matrix), best)
}

#[test]
fn nuclear_norm_matches_rank_sweep_oracle() {
    // (n, r, M) with M below n(n+1)/2, so the constraints alone do not pin the matrix,
    // but large enough that the minimiser is the planted low-rank matrix.
    let cases = [(4, 1, 8), (5, 1, 12), (6, 1, 18), (5, 2, 14), (6, 2, 20)];
    for (case, &(n, rank, m)) in cases.iter().enumerate() {
        let (ours, best) = sweep_case(300 + case as u64, n, rank, m);
        assert!((ours - best).abs() <= 1e-4 * best, "case {case}: solver {ours} vs oracle {best}");
    }
}

#[test]
fn nuclear_norm_never_exceeds_feasible_low_rank_points() {
    // Undersampled: the minimiser may have higher rank than any point the sweep finds,
    // but it can never have a larger nuclear norm.
    for (case, &(n, rank, m)) in [(6, 1, 12), (6, 1, 15), (5, 2, 10), (4, 2, 6)].iter().enumerate() {
        let (ours, best) = sweep_case(400 + case as u64, n, rank, m);
        assert!(ours <= best * (1.0 + 1e-4), "case {case}: solver {ours} vs feasible {best}");
    }
}

#[test]
fn oversampled_recovery_is_exact_for_any_rank() {
    let n = 5;
    let d = n * (n + 1) / 2;
    for rank in [1, 3, 5] {
        let mut s = DirectionSampler::new(40 + rank as u64, n).unwrap();
        let target = rank_target(&mut s, rank);
        let (sensing, y) = spherical_probes(&mut s, &target, d + 3);
        let r = recover(&RecoveryProblem::new(n, sensing, y, 0.0).unwrap(), &SolverConfig::default()).unwrap();
        assert!((&r.matrix - &target).norm() <= 1e-5 * target.norm(), "rank {rank}");
    }
}

#[test]
fn zero_target_gives_zero() {
    let mut s = DirectionSampler::new(3, 4).unwrap();
    let (sensing, y) = spherical_probes(&mut s, &DMatrix::zeros(4, 4), 6);
    let r = recover(&RecoveryProblem::new(4, sensing, y, 0.0).unwrap(), &SolverConfig::default()).unwrap();
    assert_eq!(r.matrix, DMatrix::zeros(4, 4));
    assert_eq!(r.diagnostics.nuclear_norm, 0.0);
}

#[test]
fn single_component_batch_is_plain_recovery() {
    let records: Vec<DatasetRecord> = (0..3)
        .map(|i| DatasetRecord::new(DVector::from_fn(3, |j, _| (i + j) as f64 * 0.4 - 0.5), Label::Positive))
        .collect();
    let p = LogisticRegression::new(&records).unwrap();
    let x = DVector::from_column_slice(&[0.2, -0.1, 0.4]);
    let (m, delta) = (7, 1e-3);
    for scheme in [MeasurementScheme::Spherical, MeasurementScheme::Gaussian] {
        let config = SolverConfig::default();
        let mut counter = EvalCounter::new();
        let mut sampler = DirectionSampler::new(5, 3).unwrap();
        let batch = estimate_hessian_batch(&p, &x, &[2], m, delta, scheme, &mut sampler, &mut counter, &config).unwrap();
        assert_eq!(counter.count(), scheme.evals_per_component(m));

        let mut sampler = DirectionSampler::new(5, 3).unwrap();
        let mut c = EvalCounter::new();
        let (sensing, values) = match scheme {
            MeasurementScheme::Spherical => {
                let mut pairs = vec![];
                let mut values = vec![];
                for _ in 0..m {
                    let (u, v) = (sampler.sample_sphere(), sampler.sample_sphere());
                    values.push(measure_spherical(&p, &x, 2, &u, &v, delta, &mut c).unwrap().value);
                    pairs.push((u, v));
                }
                (Sensing::Spherical(pairs), values)
            }
            MeasurementScheme::Gaussian => {
                let base = eval_component(&p, &x, 2, &mut c).unwrap();
                let mut dirs = vec![];
                let mut values = vec![];
                for _ in 0..m {
                    let a = sampler.sample_gaussian();
                    values.push(measure_gaussian(&p, &x, 2, &a, delta, base, &mut c).unwrap().value);
                    dirs.push(a);
                }
                (Sensing::Gaussian(dirs), values)
            }
        };
        let eps = auto_feasibility(p.component_hessian_lipschitz(2), delta, &sensing, &values);
        let single = recover(&RecoveryProblem::new(3, sensing, values, eps).unwrap(), &config).unwrap();
        assert_eq!(batch.matrix, single.matrix);
    }
}

#[test]
fn linear_regression_components_are_recovered_exactly() {
    let n = 4;
    let mut s = DirectionSampler::new(8, n).unwrap();
    let records: Vec<DatasetRecord> = (0..12)
        .map(|_| DatasetRecord::new(s.sample_gaussian(), Label::Target(s.sample_gaussian()[0])))
        .collect();
    let p = LinearRegression::new(&records).unwrap();
    let m = n * (n + 1) / 2;
    for scheme in [MeasurementScheme::Spherical, MeasurementScheme::Gaussian] {
        for seed in 0..5 {
            let mut sampler = DirectionSampler::new(seed, n).unwrap();
            let x = sampler.sample_gaussian();
            let batch = sampler.sample_batch(12, 5);
            let mut counter = EvalCounter::new();
            let h = estimate_hessian_batch(&p, &x, &batch, m, 1e-3, scheme, &mut sampler, &mut counter, &SolverConfig::default())
                .unwrap();
            assert_eq!(counter.count(), 5 * scheme.evals_per_component(m));
            let mut mean = DMatrix::zeros(n, n);
            for &xi in &batch {
                let z = &records[xi].features;
                mean += z * z.transpose() * 2.0;
            }
            mean /= 5.0;
            assert!((&h.matrix - &mean).norm() <= 1e-6 * mean.norm(), "{scheme:?} seed {seed}");
            assert_eq!(h.matrix, h.matrix.transpose());
        }
    }
}

fn iris_logistic() -> LogisticRegression {
    let mut records = load_csv(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/iris.csv"), &CsvSchema::iris()).unwrap();
    standardize(&mut records);
    LogisticRegression::new(&records).unwrap()
}

fn logistic_batch_error(m: usize, scheme: MeasurementScheme, config: &SolverConfig, seed: u64) -> f64 {
    let p = iris_logistic();
    let mut s = DirectionSampler::new(seed, 4).unwrap();
    let x = s.sample_gaussian();
    let batch = s.sample_batch(p.num_components(), 5);
    let mut counter = EvalCounter::new();
    let h = estimate_hessian_batch(&p, &x, &batch, m, 1e-3, scheme, &mut s, &mut counter, config).unwrap();
    let mut mean = DMatrix::zeros(4, 4);
    for &xi in &batch {
        mean += analytic_hessian(&p, &x, xi).unwrap();
    }
    (h.matrix - mean / 5.0).norm()
}

/// With `M = 8` probes per component in dimension 4, nuclear-norm recovery of the
/// rank-one component Hessians does not always succeed, and the default slack
/// `4L₂δ` (about 1.6e-2 for the largest iris features) biases the estimate by the same
/// order. The 1e-2 target therefore does not hold across draws; run with `--ignored` to
/// see the failing draws.
#[test]
#[ignore = "the 1e-2 accuracy at M = 8 with the default slack is not attainable on every draw"]
fn logistic_batch_matches_analytic_mean_at_small_m() {
    let errors: Vec<f64> = (0..20)
        .map(|seed| logistic_batch_error(8, MeasurementScheme::Spherical, &SolverConfig::default(), seed))
        .collect();
    assert!(errors.iter().all(|&e| e <= 1e-2), "{errors:?}");
}

#[test]
fn logistic_batch_matches_analytic_mean_when_oversampled() {
    for scheme in [MeasurementScheme::Spherical, MeasurementScheme::Gaussian] {
        for seed in 0..10 {
            let e = logistic_batch_error(10, scheme, &exact_config(), seed);
            assert!(e <= 1e-2, "{scheme:?} seed {seed}: {e}");
        }
    }
}

#[test]
fn phase_transition_at_desk_scale() {
    let n = 30;
    let success = |m: usize| {
        (0..10u64)
            .filter(|&seed| {
                let mut s = DirectionSampler::new(seed, n).unwrap();
                let target = rank_target(&mut s, 1);
                let (sensing, y) = gaussian_probes(&mut s, &target, m);
                let r = recover(&RecoveryProblem::new(n, sensing, y, 0.0).unwrap(), &SolverConfig::default()).unwrap();
                (&r.matrix - &target).norm() <= 1e-4 * target.norm()
            })
            .count()
    };
    assert_eq!(success(180), 10);
    assert!(success(30) <= 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn recovered_matrices_are_symmetric_and_feasible(
        seed in 0u64..10_000,
        n in 2usize..6,
        m in 1usize..12,
        eps in prop_oneof![Just(0.0), 1e-3f64..0.5],
        gaussian in any::<bool>(),
    ) {
        let mut s = DirectionSampler::new(seed, n).unwrap();
        let target = rank_target(&mut s, 1 + seed as usize % n);
        let (sensing, y) = if gaussian {
            gaussian_probes(&mut s, &target, m)
        } else {
            spherical_probes(&mut s, &target, m)
        };
        let rp = RecoveryProblem::new(n, sensing, y, eps).unwrap();
        let config = SolverConfig { feasibility: Feasibility::Fixed(eps), ..SolverConfig::default() };
        let r = recover(&rp, &config).unwrap();
        prop_assert_eq!(&r.matrix, &r.matrix.transpose());
        if r.diagnostics.converged {
            let scale = rp.values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            prop_assert!(rp.constraint_residual(&r.matrix) <= eps + 1e-5 * scale);
        }
    }
}

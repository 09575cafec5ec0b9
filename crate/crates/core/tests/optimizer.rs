use nalgebra::{DMatrix, DVector};
use zocubic::*;

fn iris() -> LogisticRegression {
    let mut records = load_csv(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/iris.csv"), &CsvSchema::iris()).unwrap();
    standardize(&mut records);
    LogisticRegression::new(&records).unwrap()
}

fn quadratic_config(n: usize, scheme: MeasurementScheme, iterations: usize) -> CubicNewtonConfig {
    CubicNewtonConfig {
        m1: 1,
        m2: 1,
        measurements: n * (n + 1) / 2,
        delta: 1e-3,
        alpha: 1.0,
        iterations,
        seed: 3,
        scheme,
        ..CubicNewtonConfig::default()
    }
}

#[test]
fn zero_iterations_leave_the_start_point() {
    let p = QuadraticSum::half_norm_squared(3).unwrap();
    let x0 = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
    let trace = cubic_newton_run(&p, &x0, &quadratic_config(3, MeasurementScheme::Spherical, 0)).unwrap();
    assert_eq!(trace.records.len(), 1);
    assert_eq!(trace.total_evals(), 0);
    assert_eq!(trace.output_index, None);
    assert_eq!(trace.output_point(), &x0);
    assert!(!trace.budget_exhausted);
}

#[test]
fn deterministic_quadratic_converges_quickly() {
    for scheme in [MeasurementScheme::Spherical, MeasurementScheme::Gaussian] {
        for n in [2, 4, 6] {
            let p = QuadraticSum::half_norm_squared(n).unwrap();
            let x0 = DVector::from_fn(n, |i, _| 1.0 + i as f64 * 0.5);
            let trace = cubic_newton_run(&p, &x0, &quadratic_config(n, scheme, 5)).unwrap();
            // First step: g = x₀, H = I, α = 1 gives s = −t·x₀ with t(1 + t‖x₀‖/2) = 1.
            let r = x0.norm();
            let t = (-1.0 + (1.0 + 2.0 * r).sqrt()) / r;
            let expected = &x0 * (1.0 - t);
            assert!((&trace.iterates[1] - expected).norm() <= 1e-5 * r, "{scheme:?} n={n}");
            let losses: Vec<f64> = trace.records.iter().map(|r| r.train_loss).collect();
            assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
            assert!(losses[5] <= 1e-3 * losses[0], "{scheme:?} n={n}: {losses:?}");
            assert!(trace.records[1..].iter().all(|r| r.recovery_ok() == Some(true)));
        }
    }
}

#[test]
fn per_iteration_budget_is_exact() {
    let p = iris();
    let x0 = DVector::zeros(4);
    for scheme in [MeasurementScheme::Spherical, MeasurementScheme::Gaussian] {
        let config = CubicNewtonConfig {
            iterations: 6,
            scheme,
            ..CubicNewtonConfig::default()
        };
        let trace = cubic_newton_run(&p, &x0, &config).unwrap();
        let per = match scheme {
            MeasurementScheme::Spherical => 2 * 4 * 5 + 4 * 8 * 5,
            MeasurementScheme::Gaussian => 2 * 4 * 5 + (2 * 8 + 1) * 5,
        };
        for (t, r) in trace.records.iter().enumerate() {
            assert_eq!(r.cum_evals, per * t as u64);
        }
    }
    let sgd = zo_sgd_run(&p, &x0, &ZoSgdConfig { iterations: 4, ..ZoSgdConfig::default() }).unwrap();
    assert_eq!(sgd.total_evals(), 4 * 2 * 4 * 5);
}

#[test]
fn budget_cap_stops_early() {
    let p = iris();
    let x0 = DVector::zeros(4);
    let per = CubicNewtonConfig::default().evals_per_iteration(4);
    let config = CubicNewtonConfig {
        iterations: 100,
        eval_budget: Some(3 * per + per / 2),
        ..CubicNewtonConfig::default()
    };
    let trace = cubic_newton_run(&p, &x0, &config).unwrap();
    assert!(trace.budget_exhausted);
    assert_eq!(trace.iterations(), 3);
    assert!(trace.total_evals() <= config.eval_budget.unwrap());

    let tiny = CubicNewtonConfig {
        eval_budget: Some(per - 1),
        ..config
    };
    let trace = cubic_newton_run(&p, &x0, &tiny).unwrap();
    assert!(trace.budget_exhausted);
    assert_eq!(trace.records.len(), 1);
    assert_eq!(trace.output_index, None);
}

#[test]
fn runs_are_reproducible() {
    let p = iris();
    let x0 = DVector::from_column_slice(&[0.3, -0.2, 0.1, 0.5]);
    let config = CubicNewtonConfig {
        iterations: 5,
        seed: 11,
        ..CubicNewtonConfig::default()
    };
    let a = cubic_newton_run(&p, &x0, &config).unwrap();
    let b = cubic_newton_run(&p, &x0, &config).unwrap();
    assert_eq!(a, b);
    let bits = |t: &RunTrace| t.records.iter().map(|r| r.train_loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    let c = cubic_newton_run(&p, &x0, &CubicNewtonConfig { seed: 12, ..config }).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn output_index_is_uniform() {
    let p = QuadraticSum::half_norm_squared(1).unwrap();
    let x0 = DVector::from_element(1, 1.0);
    let t = 10;
    let mut counts = [0usize; 10];
    let draws = 10_000;
    for seed in 0..draws {
        let config = ZoSgdConfig {
            batch: 1,
            iterations: t,
            seed,
            ..ZoSgdConfig::default()
        };
        counts[zo_sgd_run(&p, &x0, &config).unwrap().output_index.unwrap()] += 1;
    }
    let expected = draws as f64 / t as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of χ² with 9 degrees of freedom.
    assert!(chi2 < 21.666, "{counts:?} χ² = {chi2}");

    // The cubic method draws R from the same independent stream.
    let config = CubicNewtonConfig {
        iterations: t,
        seed: 5,
        ..quadratic_config(1, MeasurementScheme::Gaussian, t)
    };
    let cubic = cubic_newton_run(&p, &x0, &config).unwrap();
    let sgd = zo_sgd_run(&p, &x0, &ZoSgdConfig { iterations: t, seed: 5, ..ZoSgdConfig::default() }).unwrap();
    assert_eq!(cubic.output_index, sgd.output_index);
    assert_eq!(cubic.output_point(), &cubic.iterates[cubic.output_index.unwrap() + 1]);
}

#[test]
fn zo_sgd_examples() {
    let p = QuadraticSum::half_norm_squared(3).unwrap();
    let x0 = DVector::from_column_slice(&[1.0, 2.0, -3.0]);
    let frozen = zo_sgd_run(&p, &x0, &ZoSgdConfig { step_size: 0.0, iterations: 5, ..ZoSgdConfig::default() }).unwrap();
    assert!(frozen.iterates.iter().all(|x| x == &x0));

    let trace = zo_sgd_run(&p, &x0, &ZoSgdConfig { step_size: 0.1, iterations: 8, ..ZoSgdConfig::default() }).unwrap();
    for w in trace.iterates.windows(2) {
        assert!((w[1].norm() / w[0].norm() - 0.9).abs() < 1e-9);
    }
}

#[test]
fn iris_loss_falls_below_log_two() {
    let p = iris();
    let x0 = DVector::zeros(4);
    let config = CubicNewtonConfig {
        iterations: 100,
        eval_budget: Some(20_000),
        ..CubicNewtonConfig::default()
    };
    for seed in 0..5 {
        let trace = cubic_newton_run(&p, &x0, &CubicNewtonConfig { seed, ..config.clone() }).unwrap();
        assert!((trace.records[0].train_loss - 2f64.ln()).abs() < 1e-14);
        let last = trace.records.last().unwrap();
        assert!(last.cum_evals <= 20_000);
        assert!(last.train_loss < 2f64.ln(), "seed {seed}: {}", last.train_loss);
    }
}

#[test]
fn model_decrease_holds_along_runs() {
    let p = iris();
    let x0 = DVector::from_column_slice(&[0.5, -0.5, 1.0, 0.2]);
    for scheme in [MeasurementScheme::Spherical, MeasurementScheme::Gaussian] {
        let config = CubicNewtonConfig {
            iterations: 15,
            scheme,
            ..CubicNewtonConfig::default()
        };
        let trace = cubic_newton_run(&p, &x0, &config).unwrap();
        for r in &trace.records[1..] {
            let bound = -config.alpha / 12.0 * r.step_norm.powi(3);
            assert!(r.model_value.unwrap() <= bound + 1e-12 * (1.0 + bound.abs()));
        }
    }
}

#[test]
fn theory_schedule_examples() {
    let inputs = TheoryInputs {
        eta: 0.1,
        beta: 0.1,
        l2: 1.0,
        gap: 1.0,
        sigma1: Some(0.5),
        sigma2: Some(1.0),
        tau2: Some(1.0),
        n: 4,
        r: 1,
    };
    let p = theoretical_params(&inputs).unwrap();
    assert_eq!((p.m1, p.iterations, p.measurements), (100, 32, 57));
    assert_eq!(p.alpha, 1.0);
    assert_eq!(p.gradient_evals, 32 * 100 * 2 * 4);
    assert_eq!(p.hessian_probes, 32 * 57 * p.m2 as u64);
    // κ = η/800: m₁ = (σ₁/κ)² = 4000², m₂ = n√(τ₂⁴+2σ₂⁴)/(2(L₂+α)κ) = 4√3/(4/8000).
    assert_eq!(p.variance_m1, Some(16_000_000));
    assert_eq!(p.variance_m2, Some((8000.0 * 3f64.sqrt()).ceil() as usize));
    let config = p.to_config(1, 1e-3, MeasurementScheme::Gaussian);
    assert_eq!((config.m1, config.m2, config.measurements, config.iterations), (100, p.m2, 57, 32));

    for bad in [0.0, 1.0, 1.5] {
        assert!(theoretical_params(&TheoryInputs { eta: bad, ..inputs }).is_err());
        assert!(theoretical_params(&TheoryInputs { beta: bad, ..inputs }).is_err());
    }
}

#[test]
fn stationarity_examples() {
    let grid = [1e-4, 1e-3, 0.01, 0.03, 0.04, 0.05, 0.1, 1.0];

    let bowl = QuadraticSum::new(vec![(DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 1.0])), DVector::zeros(2), 0.0)])
        .unwrap();
    let report = stationarity_report(&bowl, &DVector::zeros(2), &grid).unwrap();
    assert_eq!(report.qualifying.len(), grid.len());

    let saddle = QuadraticSum::new(vec![(DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, -2.0])), DVector::zeros(2), 0.0)])
        .unwrap();
    let report = stationarity_report(&saddle, &DVector::zeros(2), &grid).unwrap();
    assert_eq!(report.gradient_measure, 0.0);
    assert!(report.curvature_measure.is_infinite());
    assert!(report.qualifying.is_empty());

    // ∇F = 0 with λ_min = −0.3 and L₂ = 1: √η ≥ 0.2, so η ≥ 0.04.
    let curved = BlackBox::new(2, 1, |x: &DVector<f64>, _| 0.15 * x[0] * x[0] - 0.15 * x[1] * x[1]);
    assert!(stationarity_report(&curved, &DVector::zeros(2), &grid).is_err());
    let h = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.5, -0.3]));
    let quad = QuadraticWithLipschitz(QuadraticSum::new(vec![(h, DVector::zeros(2), 0.0)]).unwrap());
    let report = stationarity_report(&quad, &DVector::zeros(2), &grid).unwrap();
    assert!((report.lambda_min + 0.3).abs() < 1e-12);
    assert!((report.curvature_measure - 0.2).abs() < 1e-12);
    assert_eq!(report.smallest_eta, Some(0.04));
}

/// Quadratic reported with a unit Hessian Lipschitz constant.
struct QuadraticWithLipschitz(QuadraticSum);

impl FiniteSumProblem for QuadraticWithLipschitz {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn num_components(&self) -> usize {
        self.0.num_components()
    }
    fn component_value(&self, x: &DVector<f64>, xi: usize) -> f64 {
        self.0.component_value(x, xi)
    }
    fn component_gradient(&self, x: &DVector<f64>, xi: usize) -> Option<DVector<f64>> {
        self.0.component_gradient(x, xi)
    }
    fn component_hessian(&self, x: &DVector<f64>, xi: usize) -> Option<DMatrix<f64>> {
        self.0.component_hessian(x, xi)
    }
    fn metadata(&self) -> ProblemMetadata {
        ProblemMetadata {
            hessian_lipschitz: Some(1.0),
            ..self.0.metadata()
        }
    }
}

#[test]
fn median_gradient_norm_falls_with_budget() {
    let mut s = DirectionSampler::new(2024, 4).unwrap();
    let teacher = DVector::from_column_slice(&[1.0, -0.5, 0.25, 0.0]);
    let records: Vec<DatasetRecord> = (0..200)
        .map(|_| {
            let z = s.sample_gaussian();
            let noise = s.sample_gaussian()[0];
            let label = if z.dot(&teacher) + noise >= 0.0 { Label::Positive } else { Label::Negative };
            DatasetRecord::new(z, label)
        })
        .collect();
    let p = LogisticRegression::new(&records).unwrap();
    let per = CubicNewtonConfig::default().evals_per_iteration(4);
    let medians: Vec<f64> = [5u64, 20, 80]
        .iter()
        .map(|&iters| {
            let mut norms: Vec<f64> = (0..20)
                .map(|seed| {
                    let config = CubicNewtonConfig {
                        iterations: usize::MAX,
                        eval_budget: Some(iters * per),
                        seed,
                        ..CubicNewtonConfig::default()
                    };
                    let x0 = DirectionSampler::with_stream(seed, 9, 4).unwrap().sample_gaussian();
                    let trace = cubic_newton_run(&p, &x0, &config).unwrap();
                    analytic_full_gradient(&p, trace.output_point()).unwrap().norm()
                })
                .collect();
            norms.sort_by(f64::total_cmp);
            0.5 * (norms[9] + norms[10])
        })
        .collect();
    assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
}

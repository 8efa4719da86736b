use bicomp_core::dataio::{partition, PartitionStrategy};
use bicomp_core::problems::{
    nonconvex_reg_value_grad, power_iteration, BatchSize, ConstantsKind, LogRegProblem,
    ProblemConfig, ProblemOracle, QuadraticProblem, SyntheticClassification, SyntheticQuadratic,
};
use bicomp_core::rng::{StreamKey, StreamRole};
use bicomp_core::theory::lemma1_audit;
use bicomp_core::vector::{dist_sq, norm_sq};
use proptest::prelude::*;
use rand::Rng;

fn two_worker_quadratic() -> QuadraticProblem {
    QuadraticProblem::from_dense(
        vec![
            vec![vec![2.0, 0.0], vec![0.0, 0.0]],
            vec![vec![0.0, 0.0], vec![0.0, 4.0]],
        ],
        vec![vec![2.0, 0.0], vec![0.0, 4.0]],
    )
    .unwrap()
}

fn small_logreg(lambda: f64, classes: usize) -> ProblemOracle {
    let data = SyntheticClassification {
        samples: 60,
        features: 6,
        classes,
        label_noise: 1.0,
        seed: 2,
    }
    .build();
    let p = partition(60, 3, PartitionStrategy::Contiguous, 0).unwrap();
    ProblemOracle::logreg(LogRegProblem::new(&data, None, p.workers, lambda).unwrap())
}

#[test]
fn quadratic_hand_constants() {
    let q = two_worker_quadratic();
    let c = q.exact_constants();
    assert_eq!(c.kind, ConstantsKind::Exact);
    assert!((c.l - 2.0).abs() < 1e-14);
    assert!((c.mu - 1.0).abs() < 1e-14);
    assert!((c.l_max - 4.0).abs() < 1e-14);
    assert!((c.l_hat - 8f64.sqrt()).abs() < 1e-14);
    let x = q.minimizer().unwrap();
    assert!(dist_sq(&x, &[1.0, 1.0]) < 1e-28);
    let o = ProblemOracle::quadratic(q);
    assert!((o.value(&x) + 1.5).abs() < 1e-14);
    assert!(lemma1_audit(o.constants()).all_hold);
}

#[test]
fn quadratic_rejects_indefinite_and_asymmetric() {
    assert!(QuadraticProblem::from_dense(
        vec![vec![vec![1.0, 0.0], vec![0.0, -1.0]]],
        vec![vec![0.0, 0.0]]
    )
    .is_err());
    assert!(QuadraticProblem::from_dense(
        vec![vec![vec![1.0, 0.5], vec![0.0, 1.0]]],
        vec![vec![0.0, 0.0]]
    )
    .is_err());
}

#[test]
fn reference_solution_matches_minimizer() {
    let q = SyntheticQuadratic {
        n_workers: 4,
        dim: 6,
        ridge: 0.5,
        interpolation: false,
        samples_per_worker: 0,
        sample_noise: 0.0,
        seed: 3,
    }
    .build()
    .unwrap();
    let exact = q.minimizer().unwrap();
    let o = ProblemOracle::quadratic(q);
    let r = o.compute_opt_reference(1e-12, 100_000).unwrap();
    assert!(r.usable);
    assert!(dist_sq(&r.x_star, &exact) < 1e-16);
    assert!(r.grad_norm <= 1e-6);
}

#[test]
fn interpolation_zeroes_local_gradients_at_optimum() {
    let q = SyntheticQuadratic {
        n_workers: 5,
        dim: 4,
        ridge: 0.5,
        interpolation: true,
        samples_per_worker: 0,
        sample_noise: 0.0,
        seed: 4,
    }
    .build()
    .unwrap();
    let x = q.minimizer().unwrap();
    let o = ProblemOracle::quadratic(q);
    for i in 0..5 {
        assert!(norm_sq(&o.worker_grad(i, &x)) < 1e-24);
    }
}

#[test]
fn logreg_at_origin_is_log_classes() {
    for classes in [2, 3, 5] {
        let o = small_logreg(0.0, classes);
        let x = vec![0.0; o.dim()];
        assert!((o.value(&x) - (classes as f64).ln()).abs() < 1e-14);
    }
}

#[test]
fn logreg_upper_bounds_dominate_observed_curvature() {
    let o = small_logreg(0.01, 3);
    let c = o.constants().clone();
    assert_eq!(c.kind, ConstantsKind::UpperBound);
    assert!(lemma1_audit(&c).all_hold);
    let mut rng = StreamKey::new(1, StreamRole::Audit, 0, 0).rng();
    for _ in 0..50 {
        let x: Vec<f64> = (0..o.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..o.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        for i in 0..3 {
            let ratio = dist_sq(&o.worker_grad(i, &x), &o.worker_grad(i, &y)).sqrt()
                / dist_sq(&x, &y).sqrt();
            assert!(ratio <= c.l_i[i] * (1.0 + 1e-9));
        }
    }
}

#[test]
fn stochastic_gradients_average_to_full() {
    let o = small_logreg(0.0, 2);
    let x = vec![0.3; o.dim()];
    let full = o.worker_grad(0, &x);
    let b1 = o.stochastic_grad(
        0,
        &x,
        BatchSize::Full,
        &mut StreamKey::new(1, StreamRole::Sample, 0, 0).rng(),
    );
    assert_eq!(b1.unwrap(), full);
    let draws = 20_000;
    let mut mean = vec![0.0; o.dim()];
    for t in 0..draws {
        let mut rng = StreamKey::new(1, StreamRole::Sample, 0, t).rng();
        let g = o
            .stochastic_grad(0, &x, BatchSize::Sampled(1), &mut rng)
            .unwrap();
        for (m, v) in mean.iter_mut().zip(&g) {
            *m += v / draws as f64;
        }
    }
    assert!(dist_sq(&mean, &full).sqrt() < 0.02 * norm_sq(&full).sqrt() + 1e-3);
}

#[test]
fn power_iteration_on_diagonal() {
    let diag = [3.0, 1.0, 0.5];
    let r = power_iteration(
        |v| v.iter().zip(&diag).map(|(a, b)| a * b).collect(),
        3,
        1000,
        1e-12,
    );
    assert!(r.converged);
    assert!((r.value - 3.0).abs() < 1e-9);
}

#[test]
fn power_iteration_flags_slow_convergence() {
    let diag = [1.0, 0.999_999, 0.5];
    let r = power_iteration(
        |v| v.iter().zip(&diag).map(|(a, b)| a * b).collect(),
        3,
        5,
        1e-15,
    );
    assert!(!r.converged);
    assert_eq!(r.iterations, 5);
    assert!(r.value > 0.9 && r.value <= 1.0);
}

#[test]
fn logreg_rank_one_design() {
    let data = bicomp_core::dataio::parse_libsvm(b"0 1:1\n")
        .unwrap()
        .with_min_features(2);
    let p = LogRegProblem::new(&data, Some(2), vec![vec![0]], 0.0).unwrap();
    let pi = p.design_spectral_norm_sq(0);
    assert!(pi.converged);
    assert!((pi.value - 1.0).abs() < 1e-12);
    assert!((p.upper_bound_constants().l_i[0] - 0.5).abs() < 1e-12);
}

#[test]
fn problem_config_parses_inline_quadratic() {
    let cfg: ProblemConfig = serde_json::from_str(
        r#"{"kind": "quadratic", "workers": [{"a": [[2, 0], [0, 1]], "b": [1, 1]}, {"a": [[1, 0], [0, 2]], "b": [0, 1]}]}"#,
    )
    .unwrap();
    let o = cfg.build(&Default::default()).unwrap();
    assert_eq!((o.n_workers(), o.dim()), (2, 2));
    assert!(serde_json::from_str::<ProblemConfig>(r#"{"kind": "quadratic", "bogus": 1}"#).is_err());
}

proptest! {
    #[test]
    fn regularizer_is_bounded_and_smooth(x in prop::collection::vec(-1e3f64..1e3, 1..10), lambda in 0.0f64..2.0) {
        let (v, g) = nonconvex_reg_value_grad(&x, lambda);
        prop_assert!(v >= 0.0 && v <= lambda * x.len() as f64 + 1e-12);
        // each coordinate's derivative 2x/(1+x^2)^2 is bounded by 3 sqrt(3)/8
        for gi in g {
            prop_assert!(gi.abs() <= lambda * 3.0 * 3f64.sqrt() / 8.0 + 1e-12);
        }
    }
}

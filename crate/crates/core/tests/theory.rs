use bicomp_core::problems::{ConstantsKind, SmoothnessConstants};
use bicomp_core::theory::{
    abc_constants, beta_diana, dcgd_neighborhood, diana_stochastic_neighborhood, horizon_abc,
    lemma1_audit, stepsize_abc, stepsize_convex_general, stepsize_dcgd_strong,
    stepsize_diana_strong, stepsize_ef21p_strong, AbcCase, Family, TheoryInputs, TheoryReport,
};
use proptest::prelude::*;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-14 * a.abs().max(b.abs())
}

fn desk() -> TheoryInputs {
    TheoryInputs {
        n: 10,
        omega: 9.0,
        alpha: 0.1,
        l: 2.0,
        l_max: 4.0,
        l_hat: 3.0,
        mu: 0.5,
        sigma_sq: Some(0.2),
        delta0: None,
        delta_star: None,
        growth: None,
        eps: None,
    }
}

fn nonconvex() -> TheoryInputs {
    TheoryInputs {
        n: 4,
        omega: 3.0,
        alpha: 0.5,
        l: 1.0,
        l_max: 2.0,
        l_hat: 1.5,
        mu: 0.0,
        sigma_sq: Some(0.0),
        delta0: Some(1.0),
        delta_star: Some(0.5),
        growth: Some(2.0),
        eps: Some(0.1),
    }
}

#[test]
fn diana_strong_desk_values() {
    // 10/(160*9*4), sqrt(1)/(20*3*3), 0.1/200, 1/(10*0.5)
    let b = stepsize_diana_strong(&desk()).unwrap();
    assert!(close(b.term("n/(160 omega L_max)").unwrap(), 1.0 / 576.0));
    assert!(close(
        b.term("sqrt(n alpha)/(20 sqrt(omega) L_hat)").unwrap(),
        1.0 / 180.0
    ));
    assert!(close(b.term("alpha/(100 L)").unwrap(), 5e-4));
    assert!(close(b.term("1/((omega+1) mu)").unwrap(), 0.2));
    assert!(close(b.value, 5e-4));
    assert_eq!(beta_diana(9.0), 0.1);
}

#[test]
fn dcgd_and_general_drop_the_mu_term() {
    let i = desk();
    let s = stepsize_dcgd_strong(&i).unwrap();
    let g = stepsize_convex_general(&i, Family::Diana).unwrap();
    assert!(s.term("1/((omega+1) mu)").is_none());
    assert!(close(s.value, 5e-4));
    assert!(close(g.value, 5e-4));
    // 0.1 / (16 * 2)
    assert!(close(stepsize_ef21p_strong(&i).unwrap(), 3.125e-3));
}

#[test]
fn neighborhoods() {
    let i = desk();
    // 8*9/(10*0.5) * 0.3
    assert!(close(dcgd_neighborhood(&i, 0.3), 4.32));
    // 24*10*0.2/(0.5*10)
    assert!(close(diana_stochastic_neighborhood(&i).unwrap(), 9.6));
}

#[test]
fn abc_general_nonconvex_frozen() {
    let i = nonconvex();
    let abc = abc_constants(AbcCase::FullGrad, &i).unwrap();
    // A = 3*2/4, B = 1, C = 2*A*0.5
    assert_eq!((abc.a, abc.b, abc.c), (1.5, 1.0, 1.5));
    let s = stepsize_abc(&i, &abc).unwrap();
    // T = 48*1*1/0.1 * max{16, 4, 96*1.5/0.1, 16*1.5/0.1} = 480 * 1440
    assert_eq!(s.rounds, 691_200);
    assert!(close(s.horizon.value, 691_200.0));
    // 1/sqrt(2*1.5*1*691200) = 1/1440 binds
    assert!(close(s.gamma.value, 1.0 / 1440.0));
    assert!(close(s.gamma.term("eps/(16CL)").unwrap(), 0.1 / 24.0));
}

#[test]
fn abc_other_cases() {
    let i = nonconvex();
    let sg = abc_constants(AbcCase::StrongGrowth, &i).unwrap();
    assert_eq!((sg.a, sg.b, sg.c), (0.0, 2.0 * 3.0 / 4.0 + 1.0, 0.0));
    let mut noisy = i.clone();
    noisy.sigma_sq = Some(0.4);
    let bv = abc_constants(AbcCase::BoundedVar, &noisy).unwrap();
    assert!(close(bv.c, 1.5 + 4.0 * 0.4 / 4.0));
    let h = abc_constants(AbcCase::Homogeneous, &noisy).unwrap();
    assert_eq!((h.a, h.b), (0.0, 1.75));
    assert!(close(h.c, 0.4));
    // homogeneous with no noise: T = 480 * max{16, 7}
    let hz = abc_constants(AbcCase::Homogeneous, &i).unwrap();
    assert!(close(horizon_abc(&i, &hz).unwrap().value, 7680.0));
}

#[test]
fn missing_inputs_are_errors() {
    let mut i = nonconvex();
    i.eps = None;
    assert!(stepsize_abc(&i, &abc_constants(AbcCase::FullGrad, &i).unwrap()).is_err());
    let mut bad = desk();
    bad.alpha = 0.0;
    assert!(stepsize_diana_strong(&bad).is_err());
}

#[test]
fn lemma1_on_inconsistent_constants() {
    let ok = SmoothnessConstants::new(2.0, vec![1.0, 3.0], 5f64.sqrt(), 0.0, ConstantsKind::Exact);
    assert!(lemma1_audit(&ok).all_hold);
    // L_max = 5 > n L = 2
    let bad = SmoothnessConstants::new(1.0, vec![0.1, 5.0], 1.0, 0.0, ConstantsKind::Exact);
    let r = lemma1_audit(&bad);
    assert!(!r.all_hold);
    assert!(r
        .checks
        .iter()
        .any(|c| c.name == "L_max <= n L" && !c.holds));
}

#[test]
fn report_serializes() {
    let i = nonconvex();
    let r = TheoryReport::compute(&i, None, None).unwrap();
    let text = serde_json::to_string(&r).unwrap();
    assert!(text.contains("\"abc\""));
    assert!(r.dcgd_nonconvex.is_some());
}

fn inputs() -> impl Strategy<Value = TheoryInputs> {
    (
        1usize..100,
        0.0f64..50.0,
        1e-3f64..=1.0,
        0.1f64..10.0,
        1e-3f64..1.0,
    )
        .prop_map(|(n, omega, alpha, l, mu)| TheoryInputs {
            n,
            omega,
            alpha,
            l,
            l_max: l * n as f64,
            l_hat: l * (n as f64).sqrt(),
            mu: mu * l,
            sigma_sq: None,
            delta0: None,
            delta_star: None,
            growth: None,
            eps: None,
        })
}

proptest! {
    #[test]
    fn stepsizes_shrink_with_more_compression(i in inputs(), extra in 0.0f64..10.0, shrink in 0.1f64..1.0) {
        let base = stepsize_diana_strong(&i).unwrap().value;
        let mut noisier = i.clone();
        noisier.omega += extra;
        prop_assert!(stepsize_diana_strong(&noisier).unwrap().value <= base);
        let mut coarser = i.clone();
        coarser.alpha *= shrink;
        prop_assert!(stepsize_diana_strong(&coarser).unwrap().value <= base);
        prop_assert!(stepsize_dcgd_strong(&i).unwrap().value >= base);
    }

    #[test]
    fn strongly_convex_stepsize_keeps_contraction_positive(i in inputs()) {
        let g = stepsize_diana_strong(&i).unwrap().value;
        prop_assert!(g * i.mu / 2.0 < 1.0);
        prop_assert!(g > 0.0);
    }
}

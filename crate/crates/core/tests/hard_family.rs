use genqvi::hard::{
    adversarial_pair, build_hard_mdp, closed_form_qstar, distinguishability_experiment,
    lower_bound_budget, xi_threshold, HardFamilyParams,
};
use genqvi::mdp::exact_optimal_q;
use genqvi::qvi::LogBase;

#[test]
fn solver_matches_closed_form_across_grid() {
    for &gamma in &[0.4, 0.55, 0.75, 0.95] {
        for &p in &[0.0, 0.3, 0.9, 1.0] {
            let params = HardFamilyParams::new(2, 2, gamma, p).unwrap();
            let q = exact_optimal_q(&build_hard_mdp(&params).unwrap(), 1e-13).unwrap();
            let expected = closed_form_qstar(gamma, p).unwrap();
            for z in params.s_pairs() {
                assert!((q.values()[z] - expected).abs() <= 1e-12, "γ={gamma} p={p}");
            }
            // Y₁ value is 1/(1 − γp), Y₂ is worthless
            let y1 = params.y1_state(0);
            assert!((q.get(y1, 0) - 1.0 / (1.0 - gamma * p)).abs() <= 1e-12);
            assert!(q.get(params.y2_state(0), 0).abs() <= 1e-15);
        }
    }
}

#[test]
fn adversarial_pair_at_high_discount() {
    let pair = adversarial_pair(1, 1, 0.9, 0.01).unwrap();
    assert!((pair.p - 2.6 / 2.7).abs() < 1e-15);
    // α = 2(1 − γp)²ε/γ² with 1 − γp = 2/15, about 0.0439ε
    assert!((pair.alpha / (8.0 / 225.0 * 0.01 / 0.81) - 1.0).abs() < 1e-12);
    assert!(pair.qstar1 - pair.qstar0 > 2.0 * 0.01);
    for (m, p) in [(&pair.m0, pair.p), (&pair.m1, pair.p + pair.alpha)] {
        let q = exact_optimal_q(m, 1e-13).unwrap();
        assert!((q.values()[0] - closed_form_qstar(0.9, p).unwrap()).abs() < 1e-11);
    }
    // admissible up to (1 − p)/(4γ²(1 − γp)²) ≈ 0.643
    assert!(adversarial_pair(1, 1, 0.9, 0.6).is_ok());
    assert!(adversarial_pair(1, 1, 0.9, 0.7).is_err());
}

#[test]
fn plug_in_estimator_needs_more_data_to_separate() {
    let t_grid = [1, 10, 100, 1000, 5000];
    let rows = distinguishability_experiment(0.6, 0.1, &t_grid, 400, 5).unwrap();
    for model in [0u8, 1] {
        let curve: Vec<f64> = rows
            .iter()
            .filter(|r| r.model == model)
            .map(|r| r.failure.rate)
            .collect();
        assert!(curve[0] > 0.5, "model {model}: {curve:?}");
        assert!(*curve.last().unwrap() < 0.05, "model {model}: {curve:?}");
        // decreasing up to sampling noise
        for w in curve.windows(2) {
            assert!(w[1] <= w[0] + 0.05, "model {model}: {curve:?}");
        }
    }
}

#[test]
fn lower_bound_quantities_scale() {
    let base = LogBase::Natural;
    let a = xi_threshold(0.05, 1e-4, 0.9, base).unwrap();
    let b = xi_threshold(0.2, 1e-4, 0.9, base).unwrap();
    assert!((a / b - 16.0).abs() < 1e-9);
    assert_eq!(xi_threshold(0.1, 0.5, 0.9, base).unwrap(), 0.0);
    assert!(lower_bound_budget(12, 0.1, 0.5, 0.9, base).is_err());
    let small = lower_bound_budget(300, 0.01, 1e-3, 0.9, base).unwrap();
    let large = lower_bound_budget(300, 0.01, 1e-3, 0.95, base).unwrap();
    assert!(large > 7 * small);
}

//! Residual, verification and comparison checks on known solutions and on
//! deliberate non-solutions.

use ratchet_ruin::diagnostics::{
    comparison_suite, hjb_residual, interior_grid, mc_cross_check, verification_conditions,
    BlockedValue, FiniteDifference, FixedMaxValue, PerturbedDual, ValueFunction,
};
use ratchet_ruin::ratchet_active::{integrate_boundaries, IntegrationConfig};
use ratchet_ruin::ratchet_blocked::{m_star, ratchet_condition, MStarConfig};
use ratchet_ruin::simulator::{Estimator, RuinEstimate};
use ratchet_ruin::{ConsumptionSpec, MarketParams, Model};

fn model(c: ConsumptionSpec) -> Model {
    Model::new(MarketParams::new(0.05, 0.10, 0.20, 0.04).unwrap(), c).unwrap()
}

fn fixed() -> Model {
    model(ConsumptionSpec::affine(0.01, 3.0).unwrap())
}

fn blocked() -> Model {
    model(ConsumptionSpec::affine(0.06, 0.0).unwrap())
}

#[test]
fn closed_form_solves_hjb_tightly() {
    let md = fixed();
    let v = FixedMaxValue::new(&md, 100.0).unwrap();
    let r = hjb_residual(&v, &md, &interior_grid(0.0, 80.0, 100));
    assert!(r.pass);
    assert!(r.worst_residual < 1e-8, "{}", r.worst_residual);
}

#[test]
fn blocked_solves_hjb_tightly() {
    let md = blocked();
    let v = BlockedValue::new(&md, 100.0).unwrap();
    let r = hjb_residual(&v, &md, &interior_grid(0.0, 100.0, 100));
    assert!(r.worst_residual < 1e-8, "{}", r.worst_residual);
}

#[test]
fn perturbed_coefficient_fails_hjb() {
    let md = blocked();
    let v = PerturbedDual::blocked(&md, 100.0, 1.01).unwrap();
    let r = hjb_residual(&v, &md, &interior_grid(0.0, 100.0, 100));
    assert!(!r.pass, "{}", r.worst_residual);
}

#[test]
fn unit_perturbation_reproduces_solution() {
    let md = blocked();
    let a = BlockedValue::new(&md, 100.0).unwrap();
    let b = PerturbedDual::blocked(&md, 100.0, 1.0).unwrap();
    for w in interior_grid(0.0, 100.0, 9) {
        let (x, y) = (a.derivs(w).unwrap(), b.derivs(w).unwrap());
        assert_eq!(x.psi, y.psi);
        assert!((x.psi_ww - y.psi_ww).abs() <= 1e-12 * x.psi_ww);
    }
}

#[test]
fn perturbed_active_curve_fails_hjb() {
    let md = model(ConsumptionSpec::affine(0.04, 1.0).unwrap());
    let ms = m_star(&md, 20.0, &MStarConfig::default()).unwrap();
    let mb = integrate_boundaries(&md, 20.0, &ms, &IntegrationConfig::default()).unwrap();
    let grid = interior_grid(0.0, 20.0, 50);
    assert!(hjb_residual(&PerturbedDual::active(&mb, 20.0, 1.0).unwrap(), &md, &grid).pass);
    assert!(!hjb_residual(&PerturbedDual::active(&mb, 20.0, 1.01).unwrap(), &md, &grid).pass);
}

#[test]
fn finite_differences_agree_with_analytic() {
    let md = blocked();
    let v = FiniteDifference(BlockedValue::new(&md, 100.0).unwrap());
    let r = hjb_residual(&v, &md, &interior_grid(0.0, 100.0, 40));
    assert!(r.pass, "{}", r.worst_residual);
    assert_eq!(r.threshold, 1e-3);
}

#[test]
fn non_convex_candidate_reports_degenerate_points() {
    let md = blocked();
    let v = PerturbedDual::blocked(&md, 100.0, 3.0).unwrap();
    let r = hjb_residual(&v, &md, &interior_grid(0.0, 100.0, 20));
    assert!(!r.pass);
    assert!(r
        .notes
        .iter()
        .any(|n| n.contains("DegenerateSecondDerivative")));
}

#[test]
fn verification_passes_for_closed_form() {
    let md = fixed();
    let v = FixedMaxValue::new(&md, 100.0).unwrap();
    let r = verification_conditions(&v, &md, &interior_grid(0.0, 80.0, 50));
    assert!(r.pass, "{:?}", r.failures());
    let slopes = v.m_slopes().unwrap();
    assert!(slopes.iter().all(|&(_, d)| d > 0.0));
}

#[test]
fn fixed_max_m_slope_matches_closed_expression() {
    // h_m = gamma (1 - r w / c)^(gamma - 1) r w c' / c^2 for affine c.
    let md = fixed();
    let v = FixedMaxValue::new(&md, 100.0).unwrap();
    let (r, g, c, cp) = (0.05, md.constants.gamma, 4.0, 0.01);
    for (w, d) in v.m_slopes().unwrap() {
        let expect = g * (1.0 - r * w / c).powf(g - 1.0) * r * w * cp / (c * c);
        assert!(
            (d - expect).abs() < 1e-6 * expect.abs(),
            "{w}: {d} vs {expect}"
        );
    }
}

#[test]
fn verification_passes_for_blocked() {
    let md = blocked();
    let v = BlockedValue::new(&md, 100.0).unwrap();
    let r = verification_conditions(&v, &md, &interior_grid(0.0, 100.0, 50));
    assert!(r.pass, "{:?}", r.failures());
}

#[test]
fn m_slope_fails_where_ratchet_condition_fails() {
    let md = model(ConsumptionSpec::power(1.0, 0.5).unwrap());
    let m = 100.0;
    assert!(!ratchet_condition(&md, m).unwrap().holds);
    let v = BlockedValue::new(&md, m).unwrap();
    let r = verification_conditions(&v, &md, &interior_grid(0.0, m, 20));
    assert!(!r.pass);
    let failed = r.failures();
    assert!(
        failed
            .iter()
            .any(|f| f.ends_with("m_derivative_nonnegative")),
        "{failed:?}"
    );
}

#[test]
fn verification_passes_for_active() {
    let md = model(ConsumptionSpec::affine(0.04, 1.0).unwrap());
    let ms = m_star(&md, 20.0, &MStarConfig::default()).unwrap();
    let mb = integrate_boundaries(&md, 20.0, &ms, &IntegrationConfig::default()).unwrap();
    for m in [20.0, 0.5 * (20.0 + mb.m_star)] {
        let v = ratchet_ruin::diagnostics::ActiveValue { mb: &mb, m };
        let r = verification_conditions(&v, &md, &interior_grid(0.0, m, 30));
        assert!(r.pass, "m = {m}: {:?}", r.failures());
    }
}

#[test]
fn comparison_suite_passes_on_blocked_configurations() {
    for (c, m) in [
        (ConsumptionSpec::affine(0.06, 0.0).unwrap(), 100.0),
        (ConsumptionSpec::affine(0.08, 0.0).unwrap(), 50.0),
        (ConsumptionSpec::power(0.001, 1.5).unwrap(), 3000.0),
    ] {
        let md = model(c);
        let r = comparison_suite(&md, m);
        assert!(r.pass, "{:?}", r.failures());
        assert_eq!(r.rows.len(), 4);
        assert!(r.rows.iter().all(|x| x.details.len() >= 49));
    }
}

#[test]
fn strategy_gap_smallest_near_zero_largest_near_m() {
    let r = comparison_suite(&blocked(), 100.0);
    let gap = r
        .rows
        .iter()
        .find(|x| x.check_name == "strategy_below_benchmark")
        .unwrap();
    let d = &gap.details;
    let (min_i, max_i) = (
        d.iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0,
        d.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0,
    );
    assert_eq!(min_i, 0);
    assert_eq!(max_i, d.len() - 1);
}

fn estimate(point: f64, se: f64) -> RuinEstimate {
    RuinEstimate {
        point,
        std_error: se,
        truncation_bias_bound: 0.0,
        n_paths: 1000,
        n_ruined: 0,
        n_safe_absorbed: 0,
        n_truncated: 0,
        n_died: 0,
        t_max: 350.0,
        estimator: Estimator::SampledDeath,
    }
}

#[test]
fn cross_check_separates_wrong_values() {
    assert!(mc_cross_check(0.25, &estimate(0.251, 0.001), 3.0).pass);
    assert!(!mc_cross_check(0.25 + 10.0 * 0.001, &estimate(0.25, 0.001), 3.0).pass);
}

#[test]
fn reports_round_trip_through_json() {
    let r = comparison_suite(&blocked(), 100.0);
    let s = serde_json::to_string(&r).unwrap();
    let back: ratchet_ruin::diagnostics::CheckReport = serde_json::from_str(&s).unwrap();
    assert_eq!(r, back);
    assert_eq!(r.pass, r.worst_residual <= r.threshold);
}

//! Moving-boundary invariants against the static solution and the dual ODE.

use ratchet_ruin::ratchet_active::{
    constraint_residual, integrate_boundaries, solve_ym_given_y0, y0_derivative, IntegrationConfig,
    MovingBoundary,
};
use ratchet_ruin::ratchet_blocked::{m_star, DualFunction, MStarConfig};
use ratchet_ruin::{ConsumptionSpec, MarketParams, Model};

fn model(c: ConsumptionSpec) -> Model {
    Model::new(MarketParams::new(0.05, 0.10, 0.20, 0.04).unwrap(), c).unwrap()
}

fn crossing() -> (Model, MovingBoundary) {
    let md = model(ConsumptionSpec::affine(0.04, 1.0).unwrap());
    let ms = m_star(&md, 20.0, &MStarConfig::default()).unwrap();
    let mb = integrate_boundaries(&md, 20.0, &ms, &IntegrationConfig::default()).unwrap();
    (md, mb)
}

fn concave() -> (Model, MovingBoundary) {
    let md = model(ConsumptionSpec::power(1.0, 0.5).unwrap());
    let ms = m_star(&md, 100.0, &MStarConfig::default()).unwrap();
    let mb = integrate_boundaries(&md, 100.0, &ms, &IntegrationConfig::default()).unwrap();
    (md, mb)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn terminal_matches_static_solution() {
    let (md, mb) = crossing();
    let f = DualFunction::solve(&md, mb.m_star).unwrap();
    let t = mb.nodes.last().unwrap();
    assert!(rel(t.y0, f.boundary.y_0) < 1e-8);
    assert!(rel(t.ym, f.boundary.y_m) < 1e-8);
    assert!(rel(t.d1, f.boundary.d1) < 1e-8);
    assert!(rel(t.d2, f.boundary.d2) < 1e-8);
    // zero curvature at the reflecting end
    let c = mb.curve_at(mb.m_star).unwrap();
    assert!(c.scaled_curvature(c.y_lo).abs() < 1e-8);
    for i in 0..20 {
        let w = mb.m_star * i as f64 / 19.0;
        let a = mb.psi(w, mb.m_star).unwrap();
        let b = f.psi(w).unwrap();
        assert!((a - b).abs() < 1e-6, "w = {w}: {a} vs {b}");
    }
}

#[test]
fn constraint_and_ode_hold_everywhere() {
    for (md, mb) in [crossing(), concave()] {
        let p = md.params;
        for n in &mb.nodes {
            assert!(n.residual < 1e-9);
            let c = mb.curve_at(n.m).unwrap();
            for j in 0..20 {
                let y = c.y_lo + (c.y_hi - c.y_lo) * (j as f64 + 0.5) / 20.0;
                let r = c.ode_residual(y, p.r, p.lambda, md.constants.delta);
                assert!(r < 1e-9, "m = {} y = {y}: {r}", n.m);
            }
        }
        // value and slope rows at y0 hold at off-node points too
        for j in 0..25 {
            let m = mb.m0 + (mb.m_star - mb.m0) * (j as f64 + 0.37) / 25.0;
            let c = mb.curve_at(m).unwrap();
            assert!((c.value_unchecked(c.y_hi) - 1.0).abs() < 1e-10);
            assert!(c.slope_unchecked(c.y_hi).abs() < 1e-10 * c.k);
            assert!(constraint_residual(&md, m, c.y_hi, c.y_lo) < 1e-9);
        }
    }
}

#[test]
fn normal_derivative_vanishes_on_diagonal() {
    for (_, mb) in [crossing(), concave()] {
        for n in mb.nodes.iter().step_by(10) {
            if n.m > mb.m0 && n.m < mb.m_star {
                let d = mb.diagonal_m_derivative(n.m).unwrap();
                assert!(d.abs() < 1e-3, "m = {}: {d}", n.m);
            }
        }
    }
}

#[test]
fn dominated_by_static_solution() {
    for (md, mb) in [crossing(), concave()] {
        for j in 1..10 {
            let m = mb.m0 + (mb.m_star - mb.m0) * j as f64 / 10.0;
            let f = DualFunction::solve(&md, m).unwrap();
            for i in 1..20 {
                let w = m * i as f64 / 20.0;
                let a = mb.psi(w, m).unwrap();
                let b = f.psi(w).unwrap();
                assert!(a < b, "m = {m} w = {w}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn value_is_decreasing_and_convex_in_wealth() {
    let (_, mb) = concave();
    for &m in &[100.0, 200.0, 350.0] {
        let vals: Vec<f64> = (0..=40)
            .map(|i| mb.psi(m * i as f64 / 40.0, m).unwrap())
            .collect();
        for w in vals.windows(3) {
            assert!(w[1] < w[0]);
            assert!(w[0] - 2.0 * w[1] + w[2] > 0.0);
        }
        assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn strategy_positive_and_vanishes_at_terminal() {
    let (_, mb) = crossing();
    for j in 0..5 {
        let m = mb.m0 + (mb.m_star - mb.m0) * j as f64 / 5.0;
        for i in 1..=20 {
            let w = (m * i as f64 / 20.0).min(m);
            assert!(mb.pi(w, m).unwrap() > 0.0, "m = {m} w = {w}");
        }
    }
    let ms = mb.m_star;
    let near = mb.pi(ms * (1.0 - 1e-10), ms).unwrap();
    let mid = mb.pi(0.5 * ms, ms).unwrap();
    assert!(near < 1e-3 * mid);
}

#[test]
fn derivative_agrees_with_node_differences() {
    let (md, mb) = crossing();
    let n = &mb.nodes;
    // interior node with equal spacing on both sides
    let i = n.len() / 2;
    let (a, b, c) = (&n[i - 1], &n[i], &n[i + 1]);
    assert!(((c.m - b.m) - (b.m - a.m)).abs() < 1e-9 * b.m);
    let fd = (c.y0 - a.y0) / (c.m - a.m);
    let an = y0_derivative(&md, b.m, b.y0, b.ym).unwrap();
    assert!(rel(fd, an) < 1e-4, "{fd} vs {an}");
}

#[test]
fn ym_moves_continuously_with_y0() {
    for (md, mb) in [crossing(), concave()] {
        let n = &mb.nodes[0];
        let ym = solve_ym_given_y0(&md, n.m, n.y0).unwrap();
        assert!(rel(ym, n.ym) < 1e-8);
        let bumped = solve_ym_given_y0(&md, n.m, n.y0 * 1.01).unwrap();
        assert!(rel(bumped, ym) < 0.1, "m = {}: {ym} -> {bumped}", n.m);
        // no jumps along the way
        let mut prev = ym;
        for j in 1..=100 {
            let next = solve_ym_given_y0(&md, n.m, n.y0 * (1.0 + 1e-4 * j as f64)).unwrap();
            assert!(rel(next, prev) < 2e-3);
            prev = next;
        }
    }
}

#[test]
fn monotone_in_maximum_wealth() {
    // Established at build time: at fixed w, the ruin probability rises as
    // the running maximum rises, since consumption rises with it.
    let (_, mb) = concave();
    for &w in &[20.0, 60.0, 100.0] {
        let vals: Vec<f64> = (0..=20)
            .map(|j| {
                mb.psi(w, mb.m0 + (mb.m_star - mb.m0) * j as f64 / 20.0)
                    .unwrap()
            })
            .collect();
        for p in vals.windows(2) {
            assert!(p[1] >= p[0], "w = {w}: {vals:?}");
        }
    }
}

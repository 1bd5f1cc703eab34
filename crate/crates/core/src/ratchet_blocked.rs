//! Static free boundary for `m < c(m)/r` when wealth is held below `m`.
//!
//! The dual `f(y) = D1 y^B1 + D2 y^B2 + (c(m)/r) y` is pinned down by value
//! matching and smooth pasting at `y0` (stopper) and reflection at `y_m`
//! (controller). The ratio `z = y0/y_m` solves a scalar equation; everything
//! else follows in closed form. This module also hosts the no-ratchet
//! condition and the search for the level `m*` where ratcheting stops.

use serde::{Deserialize, Serialize};

use crate::dual::{DualCurve, PrimalPoint};
use crate::error::{Error, Result};
use crate::model::{MarketParams, Model};

const Z_MAX: f64 = 1e12;

// ---------------------------------------------------------------------------
// Boundary
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualBoundary {
    pub y_m: f64,
    pub y_0: f64,
    pub d1: f64,
    pub d2: f64,
    pub m: f64,
    pub c_of_m: f64,
    /// `y_0 / y_m`.
    pub ratio: f64,
    /// Relative residual of the ratio equation at `ratio`.
    pub ratio_residual: f64,
}

/// Left-hand side of the ratio equation, increasing in `z` on `[1, inf)`.
pub fn ratio_lhs(b1: f64, b2: f64, z: f64) -> f64 {
    let s = b1 - b2;
    ((1.0 - b2) * (z.ln() * (b1 - 1.0)).exp() + (b1 - 1.0) * (z.ln() * (b2 - 1.0)).exp()) / s
}

/// Right-hand side `c(m) / (c(m) - r m)`.
pub fn ratio_rhs(model: &Model, m: f64) -> f64 {
    let k = model.safe_level(m);
    k / (k - m)
}

fn check_regime(model: &Model, m: f64) -> Result<f64> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::InvalidState(format!("m = {m} must be positive")));
    }
    let k = model.safe_level(m);
    if !(m < k) {
        return Err(Error::OutOfRegime(format!(
            "m = {m} is not below the safe level {k}"
        )));
    }
    Ok(k)
}

/// Solves the static free-boundary problem at maximum wealth `m`.
pub fn solve_boundary(model: &Model, m: f64) -> Result<DualBoundary> {
    let k = check_regime(model, m)?;
    let (b1, b2) = (model.constants.b1, model.constants.b2);
    let s = b1 - b2;
    let rhs = k / (k - m);
    let g = |z: f64| ratio_lhs(b1, b2, z) - rhs;

    let mut hi = 2.0;
    while g(hi) < 0.0 {
        hi *= 2.0;
        if hi > Z_MAX {
            return Err(Error::NoBracket(format!(
                "ratio equation has no root below {Z_MAX:e} at m = {m}"
            )));
        }
    }
    let mut lo = 1.0;
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let z = if g(lo).abs() < g(hi).abs() { lo } else { hi };
    let ratio_residual = g(z).abs() / rhs;

    let ln_z = z.ln();
    let p1 = (1.0 - b2) / (b1 * s) * ((b1 - 1.0) * ln_z).exp();
    let p2 = (b1 - 1.0) / (b2 * s) * ((b2 - 1.0) * ln_z).exp();
    let inv_y0 = k - (k - m) * (p1 + p2);
    if !(inv_y0 > 0.0) {
        return Err(Error::NoBracket(format!(
            "reciprocal of y0 is non-positive ({inv_y0:e}) at m = {m}"
        )));
    }
    let y_0 = 1.0 / inv_y0;
    let y_m = y_0 / z;
    let e1 = -(1.0 - b2) / (b1 * s) * (k - m);
    let e2 = -(b1 - 1.0) / (b2 * s) * (k - m);
    let ln_ym = y_m.ln();
    Ok(DualBoundary {
        y_m,
        y_0,
        d1: e1 * ((1.0 - b1) * ln_ym).exp(),
        d2: e2 * ((1.0 - b2) * ln_ym).exp(),
        m,
        c_of_m: model.consumption.rate(m),
        ratio: z,
        ratio_residual,
    })
}

// ---------------------------------------------------------------------------
// Dual function and primal evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualFunction {
    pub boundary: DualBoundary,
    pub curve: DualCurve,
    pub merton_ratio: f64,
}

impl DualFunction {
    pub fn new(model: &Model, boundary: DualBoundary) -> Self {
        let (b1, b2) = (model.constants.b1, model.constants.b2);
        let s = b1 - b2;
        let k = boundary.c_of_m / model.params.r;
        let km = k - boundary.m;
        let curve = DualCurve {
            b1,
            b2,
            k,
            m: boundary.m,
            anchor: boundary.y_m,
            a1: -(1.0 - b2) / (b1 * s) * km * boundary.y_m,
            a2: -(b1 - 1.0) / (b2 * s) * km * boundary.y_m,
            y_lo: boundary.y_m,
            y_hi: boundary.y_0,
        };
        DualFunction {
            boundary,
            curve,
            merton_ratio: model.params.merton_ratio(),
        }
    }

    /// Solves the boundary at `m` and wraps it.
    pub fn solve(model: &Model, m: f64) -> Result<Self> {
        Ok(Self::new(model, solve_boundary(model, m)?))
    }

    pub fn m(&self) -> f64 {
        self.boundary.m
    }

    pub fn value(&self, y: f64) -> Result<f64> {
        self.curve.value(y)
    }

    pub fn slope(&self, y: f64) -> Result<f64> {
        self.curve.slope(y)
    }

    pub fn curvature(&self, y: f64) -> Result<f64> {
        self.curve.curvature(y)
    }

    pub fn invert(&self, w: f64) -> Result<f64> {
        self.curve.invert(w)
    }

    pub fn primal(&self, w: f64) -> Result<PrimalPoint> {
        self.curve.primal(w)
    }

    /// Minimum ruin probability at wealth `w` in `[0, m]`.
    pub fn psi(&self, w: f64) -> Result<f64> {
        Ok(self.primal(w)?.psi)
    }

    /// Optimal risky amount on `(0, m)`.
    pub fn pi(&self, w: f64) -> Result<f64> {
        let m = self.m();
        if !(w > 0.0 && w < m) {
            return Err(Error::OutOfRegime(format!("w = {w} outside (0, {m})")));
        }
        self.pi_unchecked(w)
    }

    /// Strategy on the closed interval `[0, m]`.
    pub fn pi_unchecked(&self, w: f64) -> Result<f64> {
        let y = self.invert(w)?;
        Ok(-self.merton_ratio * self.curve.scaled_curvature(y))
    }

    /// Relative residuals of the four boundary rows: value one and zero slope
    /// at `y0`, slope `m` and zero curvature at `y_m`.
    pub fn boundary_residuals(&self) -> [f64; 4] {
        let c = &self.curve;
        let (y0, ym) = (self.boundary.y_0, self.boundary.y_m);
        let scale1 = |y: f64| {
            let ln = (y / c.anchor).ln();
            (c.a1 * (c.b1 * ln).exp()).abs() + (c.a2 * (c.b2 * ln).exp()).abs() + c.k * y
        };
        let slope_scale = |y: f64| {
            let ln = (y / c.anchor).ln();
            ((c.b1 * c.a1 * (c.b1 * ln).exp()).abs() + (c.b2 * c.a2 * (c.b2 * ln).exp()).abs()) / y
                + c.k
        };
        let curv_scale = |y: f64| {
            let ln = (y / c.anchor).ln();
            ((c.b1 * (c.b1 - 1.0) * c.a1 * (c.b1 * ln).exp()).abs()
                + (c.b2 * (c.b2 - 1.0) * c.a2 * (c.b2 * ln).exp()).abs())
                / (y * y)
        };
        [
            (c.value_unchecked(y0) - 1.0).abs() / scale1(y0).max(1.0),
            c.slope_unchecked(y0).abs() / slope_scale(y0),
            (c.slope_unchecked(ym) - self.boundary.m).abs() / slope_scale(ym),
            c.curvature_unchecked(ym).abs() / curv_scale(ym),
        ]
    }
}

/// Free-function form of [`DualFunction::value`].
pub fn dual_value(f: &DualFunction, y: f64) -> Result<f64> {
    f.value(y)
}

/// Free-function form of [`DualFunction::invert`].
pub fn invert_dual(f: &DualFunction, w: f64) -> Result<f64> {
    f.invert(w)
}

/// Free-function form of [`DualFunction::psi`].
pub fn psi_blocked(f: &DualFunction, w: f64) -> Result<f64> {
    f.psi(w)
}

/// Free-function form of [`DualFunction::pi`]; `params` must be the ones the
/// function was built from.
pub fn pi_blocked(f: &DualFunction, w: f64, params: &MarketParams) -> Result<f64> {
    debug_assert!((f.merton_ratio - params.merton_ratio()).abs() <= 1e-15 * f.merton_ratio);
    f.pi(w)
}

// ---------------------------------------------------------------------------
// No-ratchet condition
// ---------------------------------------------------------------------------

/// Both sides of `c(m) - m c'(m) <= lambda / y0(m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatchetCondition {
    pub m: f64,
    /// `c(m) - m c'(m)`.
    pub lhs: f64,
    /// `lambda / y0(m)`.
    pub rhs: f64,
    pub holds: bool,
    /// Slope of the primal at zero wealth, found by inverting the dual.
    pub psi_w_at_zero: f64,
    pub y_0: f64,
}

impl RatchetCondition {
    /// `lhs - rhs`; non-positive exactly when the condition holds.
    pub fn gap(&self) -> f64 {
        self.lhs - self.rhs
    }
}

/// Evaluates the no-ratchet condition at `m` in both its boundary form and
/// its primal-slope form, and insists that the verdicts agree.
pub fn ratchet_condition(model: &Model, m: f64) -> Result<RatchetCondition> {
    check_regime(model, m)?;
    model.consumption.require_increasing(m)?;
    let f = DualFunction::solve(model, m)?;
    let lambda = model.params.lambda;
    let y_0 = f.boundary.y_0;
    let lhs = model.consumption.rate(m) - m * model.consumption.marginal(m);
    let rhs = lambda / y_0;
    let holds = lhs <= rhs;

    let psi_w_at_zero = -f.curve.bisect_slope(0.0)?;
    let alt_rhs = -lambda / psi_w_at_zero;
    let alt_holds = lhs <= alt_rhs;
    if holds != alt_holds && (lhs - rhs).abs() > 1e-9 * rhs.abs().max(lhs.abs()) {
        return Err(Error::ConvergenceError(format!(
            "condition forms disagree at m = {m}: lambda/y0 = {rhs}, -lambda/psi_w(0) = {alt_rhs}"
        )));
    }
    Ok(RatchetCondition {
        m,
        lhs,
        rhs,
        holds,
        psi_w_at_zero,
        y_0,
    })
}

// ---------------------------------------------------------------------------
// m*
// ---------------------------------------------------------------------------

/// Which stopping condition defines `m*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Binding {
    /// `m*` is where the maximum reaches the safe level, `m = c(m)/r`.
    SafeLevel,
    /// `m*` is where the no-ratchet condition starts to hold.
    Condition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MStarConfig {
    /// Growth factor of the coarse search grid.
    pub grid_factor: f64,
    /// Absolute tolerance as a multiple of `m0`.
    pub rel_tol: f64,
    /// Search limit as a multiple of `m0`.
    pub max_factor: f64,
}

impl Default for MStarConfig {
    fn default() -> Self {
        MStarConfig {
            grid_factor: 1.05,
            rel_tol: 1e-8,
            max_factor: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MStar {
    pub m0: f64,
    pub m_star: f64,
    pub binding: Binding,
    /// `m - c(m)/r` at `m*`.
    pub safe_gap: f64,
    /// Condition gap at `m*` when the blocked solution exists there.
    pub condition_gap: Option<f64>,
}

/// Whether ratcheting stops at `m`, and why.
fn stop_reason(model: &Model, m: f64) -> Result<Option<Binding>> {
    if m >= model.safe_level(m) {
        return Ok(Some(Binding::SafeLevel));
    }
    let cond = ratchet_condition(model, m)?;
    Ok(cond.holds.then_some(Binding::Condition))
}

/// Smallest `m > m0` where the maximum reaches the safe level or the
/// no-ratchet condition holds.
pub fn m_star(model: &Model, m0: f64, cfg: &MStarConfig) -> Result<MStar> {
    if !model.below_safe(m0) {
        return Err(Error::PreconditionViolation(format!(
            "m0 = {m0} is not below its safe level"
        )));
    }
    if ratchet_condition(model, m0)?.holds {
        return Err(Error::PreconditionViolation(format!(
            "no-ratchet condition already holds at m0 = {m0}"
        )));
    }
    if !(cfg.grid_factor > 1.0 && cfg.rel_tol > 0.0 && cfg.max_factor > 1.0) {
        return Err(Error::InvalidConfig(format!(
            "bad search configuration {cfg:?}"
        )));
    }
    let m_max = cfg.max_factor * m0;
    let mut lo = m0;
    let mut hi = m0 * cfg.grid_factor;
    loop {
        if stop_reason(model, hi)?.is_some() {
            break;
        }
        lo = hi;
        hi *= cfg.grid_factor;
        if hi > m_max {
            return Err(Error::Unbounded { m_max });
        }
    }
    let tol = cfg.rel_tol * m0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if stop_reason(model, mid)?.is_some() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let binding = stop_reason(model, hi)?.expect("upper end satisfies the stopping rule");
    let condition_gap = match binding {
        Binding::Condition => Some(ratchet_condition(model, hi)?.gap()),
        Binding::SafeLevel => None,
    };
    Ok(MStar {
        m0,
        m_star: hi,
        binding,
        safe_gap: hi - model.safe_level(hi),
        condition_gap,
    })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConsumptionSpec;

    fn params() -> MarketParams {
        MarketParams::new(0.05, 0.10, 0.20, 0.04).unwrap()
    }

    fn affine(rho: f64, kappa: f64) -> Model {
        Model::new(params(), ConsumptionSpec::affine(rho, kappa).unwrap()).unwrap()
    }

    #[test]
    fn lhs_at_one_is_one() {
        let c = affine(0.06, 0.0).constants;
        assert!((ratio_lhs(c.b1, c.b2, 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn baseline_boundary() {
        let model = affine(0.06, 0.0);
        let b = solve_boundary(&model, 100.0).unwrap();
        assert!((b.ratio - 10.205453643453215).abs() < 1e-9);
        assert!((b.y_0 - 0.01683258470800581).abs() < 1e-12);
        assert!((b.y_m - 0.0016493715317401783).abs() < 1e-13);
        assert!(b.d1 < 0.0 && b.d2 > 0.0);
        assert!(b.ratio_residual < 1e-12);
        let f = DualFunction::new(&model, b);
        for r in f.boundary_residuals() {
            assert!(r < 1e-9, "{:?}", f.boundary_residuals());
        }
        let (d1, d2) = f.curve.coefficients();
        assert!((d1 - b.d1).abs() < 1e-10 * b.d1.abs());
        assert!((d2 - b.d2).abs() < 1e-10 * b.d2.abs());
    }

    #[test]
    fn out_of_regime() {
        let model = affine(0.04, 0.0);
        assert!(matches!(
            solve_boundary(&model, 100.0),
            Err(Error::OutOfRegime(_))
        ));
    }

    #[test]
    fn inversion_endpoints_and_domain() {
        let f = DualFunction::solve(&affine(0.06, 0.0), 100.0).unwrap();
        assert_eq!(f.invert(0.0).unwrap(), f.boundary.y_0);
        assert_eq!(f.invert(100.0).unwrap(), f.boundary.y_m);
        assert!(matches!(f.invert(100.5), Err(Error::DomainError { .. })));
        assert!(matches!(
            f.value(f.boundary.y_0 * 1.1),
            Err(Error::DomainError { .. })
        ));
        assert!((f.psi(0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((f.value(f.boundary.y_0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn strategy_domain_and_limit() {
        let model = affine(0.06, 0.0);
        let f = DualFunction::solve(&model, 100.0).unwrap();
        assert!(f.pi(0.0).is_err());
        assert!(f.pi(100.0).is_err());
        assert!(f.pi(50.0).unwrap() > 0.0);
        assert!(f.pi(100.0 - 1e-8).unwrap() < 1e-2);
        assert!(pi_blocked(&f, 50.0, &model.params).unwrap() > 0.0);
    }

    #[test]
    fn proportional_consumption_never_ratchets() {
        let model = affine(0.06, 0.0);
        for &m in &[1.0, 10.0, 100.0, 1e4] {
            let c = ratchet_condition(&model, m).unwrap();
            assert!(c.holds);
            assert!(c.lhs.abs() < 1e-12 * m);
        }
    }

    #[test]
    fn convex_power_never_ratchets() {
        let model = Model::new(params(), ConsumptionSpec::power(0.001, 1.5).unwrap()).unwrap();
        // safe level exceeds m when 0.001 m^0.5 > 0.05, i.e. m > 2500
        for &m in &[3000.0, 1e4, 1e5] {
            assert!(ratchet_condition(&model, m).unwrap().holds);
        }
    }

    #[test]
    fn concave_power_has_both_branches() {
        let model = Model::new(params(), ConsumptionSpec::power(1.0, 0.5).unwrap()).unwrap();
        let verdicts: Vec<bool> = [5.0, 20.0, 60.0, 200.0]
            .iter()
            .map(|&m| ratchet_condition(&model, m).unwrap().holds)
            .collect();
        assert!(
            verdicts.iter().any(|&h| h) && verdicts.iter().any(|&h| !h),
            "{verdicts:?}"
        );
    }

    #[test]
    fn flat_consumption_rejected() {
        let model = affine(0.0, 6.0);
        assert!(matches!(
            ratchet_condition(&model, 100.0),
            Err(Error::InvalidConsumption(_))
        ));
    }

    #[test]
    fn m_star_precondition() {
        let model = affine(0.06, 0.0);
        assert!(matches!(
            m_star(&model, 100.0, &MStarConfig::default()),
            Err(Error::PreconditionViolation(_))
        ));
    }

    #[test]
    fn m_star_safe_level_for_concave_power() {
        let model = Model::new(params(), ConsumptionSpec::power(1.0, 0.5).unwrap()).unwrap();
        let ms = m_star(&model, 100.0, &MStarConfig::default()).unwrap();
        assert_eq!(ms.binding, Binding::SafeLevel);
        assert!((ms.m_star - 400.0).abs() < 1e-6);
        assert!(ms.m_star >= 400.0);
    }

    #[test]
    fn m_star_condition_crossing() {
        let model = affine(0.04, 1.0);
        let ms = m_star(&model, 20.0, &MStarConfig::default()).unwrap();
        assert_eq!(ms.binding, Binding::Condition);
        assert!(
            (ms.m_star - 37.42443043610929).abs() < 1e-6,
            "{}",
            ms.m_star
        );
        let below = ratchet_condition(&model, ms.m_star - 1e-6 * 20.0).unwrap();
        let above = ratchet_condition(&model, ms.m_star + 1e-6 * 20.0).unwrap();
        assert!(below.gap() > 0.0 && above.gap() <= 0.0);
    }
}

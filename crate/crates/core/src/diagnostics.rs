//! Residual and inequality checks shared by the tests, the acceptance suite
//! and the `verify` command.
//!
//! Candidate value functions implement [`ValueFunction`]; each check returns
//! a [`CheckReport`] whose `pass` flag is exactly `worst_residual <= threshold`.
//! Composite reports carry their parts in `rows`.

use serde::{Deserialize, Serialize};

use crate::closed_form::FixedMaxSolution;
use crate::dual::DualCurve;
use crate::error::Result;
use crate::model::Model;
use crate::ratchet_active::MovingBoundary;
use crate::ratchet_blocked::DualFunction;
use crate::simulator::RuinEstimate;

/// Floor for strict inequalities.
pub const STRICT_FLOOR: f64 = 1e-12;
/// HJB threshold with analytic derivatives.
pub const ANALYTIC_THRESHOLD: f64 = 1e-6;
/// HJB threshold with finite-difference derivatives.
pub const FD_THRESHOLD: f64 = 1e-3;

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check_name: String,
    pub grid: Vec<f64>,
    pub worst_residual: f64,
    pub threshold: f64,
    pub pass: bool,
    /// Per-point residuals or margins, aligned with `grid`.
    pub details: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rows: Vec<CheckReport>,
}

impl CheckReport {
    fn new(name: &str, grid: Vec<f64>, details: Vec<f64>, worst: f64, threshold: f64) -> Self {
        CheckReport {
            check_name: name.to_string(),
            grid,
            worst_residual: worst,
            threshold,
            // NaN never passes
            pass: worst <= threshold,
            details,
            notes: Vec::new(),
            rows: Vec::new(),
        }
    }

    /// Residual check: worst is the largest detail.
    pub fn from_residuals(name: &str, grid: Vec<f64>, details: Vec<f64>, threshold: f64) -> Self {
        let worst = details
            .iter()
            .fold(0.0f64, |a, &d| if d.is_nan() { f64::NAN } else { a.max(d) });
        Self::new(name, grid, details, worst, threshold)
    }

    /// Strict-inequality check on margins: passes when every margin exceeds
    /// [`STRICT_FLOOR`]. The residual is the shortfall below the floor.
    fn margins(name: &str, grid: Vec<f64>, margins: Vec<f64>) -> Self {
        let min = margins.iter().fold(
            f64::INFINITY,
            |a, &d| if d.is_nan() { f64::NAN } else { a.min(d) },
        );
        let worst = if min.is_nan() {
            f64::NAN
        } else {
            (STRICT_FLOOR - min).max(0.0)
        };
        let mut r = Self::new(name, grid, margins, worst, 0.0);
        r.pass = min > STRICT_FLOOR;
        r.worst_residual = if r.pass {
            0.0
        } else {
            worst.max(f64::MIN_POSITIVE)
        };
        r
    }

    /// Composite of sub-checks; the residual is the largest excess over a
    /// row threshold.
    pub fn composite(name: &str, rows: Vec<CheckReport>) -> Self {
        let worst = rows.iter().fold(0.0f64, |a, r| {
            let excess = if r.pass {
                0.0
            } else {
                (r.worst_residual - r.threshold).max(f64::MIN_POSITIVE)
            };
            if excess.is_nan() {
                f64::NAN
            } else {
                a.max(excess)
            }
        });
        let mut out = Self::new(name, Vec::new(), Vec::new(), worst, 0.0);
        out.pass = rows.iter().all(|r| r.pass);
        out.rows = rows;
        out
    }

    fn failure(name: &str, note: String) -> Self {
        let mut r = Self::new(name, Vec::new(), Vec::new(), f64::INFINITY, 0.0);
        r.pass = false;
        r.notes.push(note);
        r
    }

    /// Names of failing leaf checks.
    pub fn failures(&self) -> Vec<String> {
        if self.rows.is_empty() {
            return if self.pass {
                vec![]
            } else {
                vec![self.check_name.clone()]
            };
        }
        self.rows
            .iter()
            .flat_map(|r| {
                r.failures()
                    .into_iter()
                    .map(|n| format!("{}/{}", self.check_name, n))
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Candidate value functions
// ---------------------------------------------------------------------------

/// Value and first two wealth derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivs {
    pub psi: f64,
    pub psi_w: f64,
    pub psi_ww: f64,
}

/// A candidate ruin probability `h(w, m)` at fixed `m`.
pub trait ValueFunction {
    fn label(&self) -> String;
    fn m(&self) -> f64;
    /// Wealth interval on which the candidate is meant to solve the HJB
    /// equation.
    fn domain(&self) -> (f64, f64);
    fn derivs(&self, w: f64) -> Result<Derivs>;
    /// Whether `derivs` is analytic (as opposed to finite differences).
    fn analytic(&self) -> bool {
        true
    }
    /// `(w, h_m(w, m))` pairs for the maximum-wealth condition: the diagonal
    /// where it is reachable, interior points otherwise.
    fn m_slopes(&self) -> Result<Vec<(f64, f64)>>;
    /// Values at and above the safe level, when that level is reachable.
    fn safe_level_values(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Closed-form candidate of the fixed-maximum regime.
pub struct FixedMaxValue {
    pub model: Model,
    pub sol: FixedMaxSolution,
}

impl FixedMaxValue {
    pub fn new(model: &Model, m: f64) -> Result<Self> {
        Ok(FixedMaxValue {
            model: *model,
            sol: FixedMaxSolution::new(model, m)?,
        })
    }
}

impl ValueFunction for FixedMaxValue {
    fn label(&self) -> String {
        format!("fixed_max(m={})", self.sol.m)
    }
    fn m(&self) -> f64 {
        self.sol.m
    }
    fn domain(&self) -> (f64, f64) {
        (0.0, self.sol.safe_level())
    }
    fn derivs(&self, w: f64) -> Result<Derivs> {
        Ok(Derivs {
            psi: self.sol.psi(w),
            psi_w: self.sol.psi_w(w),
            psi_ww: self.sol.psi_ww(w),
        })
    }
    fn m_slopes(&self) -> Result<Vec<(f64, f64)>> {
        // The diagonal is unreachable here (and the value there is zero), so
        // the sign is checked at interior wealth levels.
        let m = self.sol.m;
        let h = 1e-5 * m;
        let lo = FixedMaxSolution::benchmark(&self.model, m - h)?;
        let hi = FixedMaxSolution::benchmark(&self.model, m + h)?;
        let k = self.sol.safe_level();
        Ok((1..10)
            .map(|i| {
                let w = k * i as f64 / 10.0;
                (w, (hi.psi(w) - lo.psi(w)) / (2.0 * h))
            })
            .collect())
    }
    fn safe_level_values(&self) -> Option<Vec<f64>> {
        let k = self.sol.safe_level();
        Some(
            [1.0, 1.5, 4.0]
                .iter()
                .map(|f| self.sol.psi(k * f))
                .collect(),
        )
    }
}

fn envelope_slope(
    model: &Model,
    m: f64,
    value_at: impl Fn(&DualFunction, f64) -> f64,
) -> Result<f64> {
    let f = DualFunction::solve(model, m)?;
    let ym = f.boundary.y_m;
    let h = 1e-5 * m;
    let lo = DualFunction::solve(model, m - h)?;
    let hi = DualFunction::solve(model, m + h)?;
    Ok((value_at(&hi, ym) - value_at(&lo, ym)) / (2.0 * h))
}

/// Legendre-transform candidate of the blocked regime.
pub struct BlockedValue {
    pub model: Model,
    pub f: DualFunction,
}

impl BlockedValue {
    pub fn new(model: &Model, m: f64) -> Result<Self> {
        Ok(BlockedValue {
            model: *model,
            f: DualFunction::solve(model, m)?,
        })
    }
}

impl ValueFunction for BlockedValue {
    fn label(&self) -> String {
        format!("blocked(m={})", self.f.m())
    }
    fn m(&self) -> f64 {
        self.f.m()
    }
    fn domain(&self) -> (f64, f64) {
        (0.0, self.f.m())
    }
    fn derivs(&self, w: f64) -> Result<Derivs> {
        let p = self.f.primal(w)?;
        Ok(Derivs {
            psi: p.psi,
            psi_w: p.psi_w,
            psi_ww: p.psi_ww,
        })
    }
    fn m_slopes(&self) -> Result<Vec<(f64, f64)>> {
        let m = self.f.m();
        let d = envelope_slope(&self.model, m, |f, y| f.curve.value_unchecked(y))?;
        Ok(vec![(m, d)])
    }
}

/// Dual-curve candidate with `D1` scaled by `factor` while keeping the dual
/// point of the unperturbed curve: a deliberate non-solution used as a
/// negative control.
pub struct PerturbedDual {
    pub curve: DualCurve,
    pub factor: f64,
    label: String,
    slopes: Vec<(f64, f64)>,
}

impl PerturbedDual {
    /// Perturbs the blocked solution at `m`.
    pub fn blocked(model: &Model, m: f64, factor: f64) -> Result<Self> {
        let f = DualFunction::solve(model, m)?;
        let eps = factor - 1.0;
        let d = envelope_slope(model, m, |f, y| {
            let c = &f.curve;
            c.value_unchecked(y) + eps * c.a1 * (c.b1 * (y / c.anchor).ln()).exp()
        })?;
        Ok(PerturbedDual {
            curve: f.curve,
            factor,
            label: format!("perturbed_blocked(m={m}, d1_factor={factor})"),
            slopes: vec![(m, d)],
        })
    }

    /// Perturbs the ratcheting solution at `m`. The maximum-wealth slope is
    /// that of the unperturbed curve.
    pub fn active(mb: &MovingBoundary, m: f64, factor: f64) -> Result<Self> {
        Ok(PerturbedDual {
            curve: mb.curve_at(m)?,
            factor,
            label: format!("perturbed_active(m={m}, d1_factor={factor})"),
            slopes: vec![(m, mb.diagonal_m_derivative(m)?)],
        })
    }

    /// Extra term `eps D1 y^B1` and its first two `y` derivatives.
    fn extra(&self, y: f64) -> (f64, f64, f64) {
        let c = &self.curve;
        let eps = self.factor - 1.0;
        let b1 = c.b1;
        let t = eps * c.a1 * (b1 * (y / c.anchor).ln()).exp();
        (t, b1 * t / y, b1 * (b1 - 1.0) * t / (y * y))
    }
}

impl ValueFunction for PerturbedDual {
    fn label(&self) -> String {
        self.label.clone()
    }
    fn m(&self) -> f64 {
        self.curve.m
    }
    fn domain(&self) -> (f64, f64) {
        (0.0, self.curve.m)
    }
    fn derivs(&self, w: f64) -> Result<Derivs> {
        let c = &self.curve;
        let p = c.primal(w)?;
        let y = p.y;
        // y(w) solves f'(y) = w, so y' = 1/f''(y) and y'' = -f'''(y) y'^3.
        let y1 = 1.0 / c.curvature_unchecked(y);
        let y2 = -c.third_derivative(y) * y1 * y1 * y1;
        let (e0, e1, e2) = self.extra(y);
        Ok(Derivs {
            psi: p.psi + e0,
            psi_w: p.psi_w + e1 * y1,
            psi_ww: p.psi_ww + e2 * y1 * y1 + e1 * y2,
        })
    }
    fn m_slopes(&self) -> Result<Vec<(f64, f64)>> {
        Ok(self.slopes.clone())
    }
}

/// Ratcheting candidate at one level of maximum wealth.
pub struct ActiveValue<'a> {
    pub mb: &'a MovingBoundary,
    pub m: f64,
}

impl ValueFunction for ActiveValue<'_> {
    fn label(&self) -> String {
        format!("active(m={})", self.m)
    }
    fn m(&self) -> f64 {
        self.m
    }
    fn domain(&self) -> (f64, f64) {
        (0.0, self.m)
    }
    fn derivs(&self, w: f64) -> Result<Derivs> {
        let p = self.mb.primal(w, self.m)?;
        Ok(Derivs {
            psi: p.psi,
            psi_w: p.psi_w,
            psi_ww: p.psi_ww,
        })
    }
    fn m_slopes(&self) -> Result<Vec<(f64, f64)>> {
        Ok(vec![(self.m, self.mb.diagonal_m_derivative(self.m)?)])
    }
}

/// Wraps a candidate and replaces its derivatives by central differences
/// (relative step 1e-5 of the local scale, with a Richardson pass).
pub struct FiniteDifference<V>(pub V);

impl<V: ValueFunction> ValueFunction for FiniteDifference<V> {
    fn label(&self) -> String {
        format!("fd({})", self.0.label())
    }
    fn m(&self) -> f64 {
        self.0.m()
    }
    fn domain(&self) -> (f64, f64) {
        self.0.domain()
    }
    fn analytic(&self) -> bool {
        false
    }
    fn derivs(&self, w: f64) -> Result<Derivs> {
        let (lo, hi) = self.0.domain();
        let h = 1e-5 * (hi - lo).max(w.abs());
        let f = |x: f64| -> Result<f64> { Ok(self.0.derivs(x)?.psi) };
        let (d1h, d2h) = central(&f, w, h)?;
        let (d1h2, d2h2) = central(&f, w, 0.5 * h)?;
        Ok(Derivs {
            psi: f(w)?,
            psi_w: (4.0 * d1h2 - d1h) / 3.0,
            psi_ww: (4.0 * d2h2 - d2h) / 3.0,
        })
    }
    fn m_slopes(&self) -> Result<Vec<(f64, f64)>> {
        self.0.m_slopes()
    }
    fn safe_level_values(&self) -> Option<Vec<f64>> {
        self.0.safe_level_values()
    }
}

fn central(f: &impl Fn(f64) -> Result<f64>, w: f64, h: f64) -> Result<(f64, f64)> {
    let (a, b, c) = (f(w - h)?, f(w)?, f(w + h)?);
    Ok(((c - a) / (2.0 * h), (c - 2.0 * b + a) / (h * h)))
}

/// `n` points strictly inside `(lo, hi)`, equally spaced.
pub fn interior_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| lo + (hi - lo) * i as f64 / (n + 1) as f64)
        .collect()
}

// ---------------------------------------------------------------------------
// HJB residual
// ---------------------------------------------------------------------------

fn hjb_point(model: &Model, m: f64, w: f64, d: &Derivs) -> f64 {
    let p = &model.params;
    let c = model.consumption.rate(m);
    let delta = model.constants.delta;
    let drift = (p.r * w - c) * d.psi_w;
    let control = if d.psi_ww.is_infinite() {
        0.0
    } else {
        delta * d.psi_w * d.psi_w / d.psi_ww
    };
    let kill = p.lambda * d.psi;
    let scale = drift.abs().max(control.abs()).max(kill.abs());
    (drift - control - kill).abs() / scale.max(f64::MIN_POSITIVE)
}

/// Relative residual of `(r w - c) psi_w - delta psi_w^2 / psi_ww - lambda psi`
/// on `grid`. Points where the candidate is not decreasing and strictly
/// convex are reported as degenerate and fail the check.
pub fn hjb_residual(value: &dyn ValueFunction, model: &Model, grid: &[f64]) -> CheckReport {
    let threshold = if value.analytic() {
        ANALYTIC_THRESHOLD
    } else {
        FD_THRESHOLD
    };
    let name = format!("hjb_residual[{}]", value.label());
    let m = value.m();
    let mut details = Vec::with_capacity(grid.len());
    let mut notes = Vec::new();
    for &w in grid {
        match value.derivs(w) {
            Ok(d) => {
                if !(d.psi_w < 0.0) || !(d.psi_ww > 0.0) {
                    notes.push(format!(
                        "DegenerateSecondDerivative at w = {w}: psi_w = {}, psi_ww = {}",
                        d.psi_w, d.psi_ww
                    ));
                    details.push(f64::INFINITY);
                } else {
                    details.push(hjb_point(model, m, w, &d));
                }
            }
            Err(e) => {
                notes.push(format!("evaluation failed at w = {w}: {e}"));
                details.push(f64::INFINITY);
            }
        }
    }
    let mut r = CheckReport::from_residuals(&name, grid.to_vec(), details, threshold);
    r.notes = notes;
    r
}

// ---------------------------------------------------------------------------
// Verification-theorem conditions
// ---------------------------------------------------------------------------

/// Numerical checks of the verification conditions on `grid`: monotone and
/// convex in wealth, `h(0, m) = 1`, zero at the safe level where reachable,
/// HJB with nonnegative generator off the optimum, and `m h_m >= -1e-3` on the
/// diagonal.
pub fn verification_conditions(
    value: &dyn ValueFunction,
    model: &Model,
    grid: &[f64],
) -> CheckReport {
    let name = format!("verification_conditions[{}]", value.label());
    let mut rows = Vec::new();
    let p = &model.params;
    let m = value.m();
    let c = model.consumption.rate(m);

    // (i) shape
    let mut shape = Vec::new();
    let mut derivs = Vec::new();
    for &w in grid {
        match value.derivs(w) {
            Ok(d) => {
                shape.push(d.psi_w.max(0.0) + (-d.psi_ww).max(0.0));
                derivs.push(Some(d));
            }
            Err(_) => {
                shape.push(f64::INFINITY);
                derivs.push(None);
            }
        }
    }
    rows.push(CheckReport::from_residuals(
        "decreasing_convex",
        grid.to_vec(),
        shape,
        0.0,
    ));

    // (iv) value one at zero wealth
    let at_zero = value
        .derivs(0.0)
        .map(|d| (d.psi - 1.0).abs())
        .unwrap_or(f64::INFINITY);
    rows.push(CheckReport::from_residuals(
        "value_one_at_ruin",
        vec![0.0],
        vec![at_zero],
        1e-10,
    ));

    // (v) zero at and above the safe level
    match value.safe_level_values() {
        Some(vals) => {
            let k = model.safe_level(m);
            let g = vec![k, 1.5 * k, 4.0 * k];
            rows.push(CheckReport::from_residuals(
                "zero_at_safe_level",
                g,
                vals.iter().map(|v| v.abs()).collect(),
                1e-12,
            ));
        }
        None => {
            let mut r = CheckReport::from_residuals("zero_at_safe_level", vec![], vec![], 0.0);
            r.notes
                .push("safe level not reachable from w <= m; condition vacuous".into());
            rows.push(r);
        }
    }

    // (vi) HJB and L^alpha h >= 0 for alpha away from the minimiser
    rows.push(hjb_residual(value, model, grid));
    let mut gen = Vec::new();
    for (&w, d) in grid.iter().zip(&derivs) {
        let Some(d) = d else {
            gen.push(f64::INFINITY);
            continue;
        };
        let alpha_star = if d.psi_ww.is_infinite() {
            0.0
        } else {
            -p.merton_ratio() * d.psi_w / d.psi_ww
        };
        let mut worst = 0.0f64;
        for f in [0.0, 0.5, 1.5, 2.0] {
            let a = f * alpha_star;
            let curv = if d.psi_ww.is_infinite() {
                if a == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                0.5 * p.sigma * p.sigma * a * a * d.psi_ww
            };
            let l = (p.r * w + (p.mu - p.r) * a - c) * d.psi_w + curv - p.lambda * d.psi;
            let scale = ((p.r * w - c) * d.psi_w)
                .abs()
                .max(p.lambda * d.psi.abs())
                .max(f64::MIN_POSITIVE);
            worst = worst.max(-l / scale);
        }
        gen.push(worst.max(0.0));
    }
    let thr = if value.analytic() {
        ANALYTIC_THRESHOLD
    } else {
        FD_THRESHOLD
    };
    rows.push(CheckReport::from_residuals(
        "generator_nonnegative",
        grid.to_vec(),
        gen,
        thr,
    ));

    // (iii) maximum-wealth derivative
    match value.m_slopes() {
        Ok(pts) => {
            // Scaled by m so the tolerance is independent of the wealth unit.
            let g = pts.iter().map(|p| p.0).collect();
            let neg = pts.iter().map(|p| (-m * p.1).max(0.0)).collect();
            let mut r = CheckReport::from_residuals("m_derivative_nonnegative", g, neg, 1e-3);
            r.notes = pts
                .iter()
                .map(|(w, d)| format!("h_m at w = {w}: {d:e}"))
                .collect();
            rows.push(r);
        }
        Err(e) => rows.push(CheckReport::failure(
            "m_derivative_nonnegative",
            e.to_string(),
        )),
    }

    CheckReport::composite(&name, rows)
}

// ---------------------------------------------------------------------------
// Blocked-regime comparison suite
// ---------------------------------------------------------------------------

/// Compares the blocked solution at `m` with the constant-consumption
/// benchmark on 50-point grids: the ruin probability is higher, the excess is
/// increasing in wealth, the optimal risky amount is lower, and that gap is
/// increasing in wealth.
pub fn comparison_suite(model: &Model, m: f64) -> CheckReport {
    let name = format!("blocked_comparison(m={m})");
    let f = match DualFunction::solve(model, m) {
        Ok(f) => f,
        Err(e) => return CheckReport::failure(&name, e.to_string()),
    };
    let bench = match FixedMaxSolution::benchmark(model, m) {
        Ok(b) => b,
        Err(e) => return CheckReport::failure(&name, e.to_string()),
    };
    let p = &model.params;
    let n = 50;
    let eval = |ws: &[f64], g: &dyn Fn(f64) -> Result<f64>| -> Vec<f64> {
        ws.iter().map(|&w| g(w).unwrap_or(f64::NAN)).collect()
    };
    let excess = |w: f64| -> Result<f64> { Ok(f.psi(w)? - bench.psi(w)) };
    let gap = |w: f64| -> Result<f64> { Ok(bench.pi_unchecked(w, p) - f.pi(w)?) };

    let g_closed: Vec<f64> = (1..=n).map(|i| m * i as f64 / n as f64).collect();
    let above = CheckReport::margins(
        "ruin_above_benchmark",
        g_closed.clone(),
        eval(&g_closed, &excess),
    );

    let g_half: Vec<f64> = (0..n).map(|i| m * i as f64 / n as f64).collect();
    let d = eval(&g_half, &excess);
    let inc = CheckReport::margins(
        "excess_increasing",
        g_half[1..].to_vec(),
        d.windows(2).map(|x| x[1] - x[0]).collect(),
    );

    let g_open = interior_grid(0.0, m, n);
    let gaps = eval(&g_open, &gap);
    let below = CheckReport::margins("strategy_below_benchmark", g_open.clone(), gaps.clone());
    let gap_inc = CheckReport::margins(
        "strategy_gap_increasing",
        g_open[1..].to_vec(),
        gaps.windows(2).map(|x| x[1] - x[0]).collect(),
    );
    CheckReport::composite(&name, vec![above, inc, below, gap_inc])
}

// ---------------------------------------------------------------------------
// Monte Carlo agreement
// ---------------------------------------------------------------------------

/// Passes when `|analytic - point| <= k_sigma * std_error + truncation bias`.
pub fn mc_cross_check(analytic: f64, estimate: &RuinEstimate, k_sigma: f64) -> CheckReport {
    let diff = (analytic - estimate.point).abs();
    let threshold = k_sigma * estimate.std_error + estimate.truncation_bias_bound;
    let mut r =
        CheckReport::from_residuals("mc_cross_check", vec![analytic], vec![diff], threshold);
    r.notes.push(format!(
        "analytic {analytic}, estimate {} +/- {} ({} paths)",
        estimate.point, estimate.std_error, estimate.n_paths
    ));
    r
}

/// Passes when `point + k_sigma * std_error >= optimum`: a simulated
/// strategy cannot beat the minimal ruin probability beyond noise.
pub fn mc_optimality_check(optimum: f64, estimate: &RuinEstimate, k_sigma: f64) -> CheckReport {
    let shortfall = (optimum - estimate.point - k_sigma * estimate.std_error).max(0.0);
    let mut r =
        CheckReport::from_residuals("mc_optimality_check", vec![optimum], vec![shortfall], 0.0);
    r.notes.push(format!(
        "optimum {optimum}, estimate {} +/- {} ({} paths)",
        estimate.point, estimate.std_error, estimate.n_paths
    ));
    r
}

//! Moving free boundary on `[m0, m*]` when ratcheting is optimal.
//!
//! The boundary pair `(y0(m), y_m(m))` obeys one algebraic constraint and one
//! differential relation. Writing `v = 1/y0` and `q = y_m/y0`, the constraint
//! is linear in `v`, so `v = V(m, q)` exactly and the system collapses to a
//! scalar ODE for `q(m)`. That ODE is integrated backward from `m*`.
//!
//! At `m*` the ODE is 0/0: either the trajectory touches the fold of the
//! constraint (where the static solution lives) or `q = 0` at the safe
//! level. The first step is therefore taken with backward Euler, after which
//! classical RK4 runs with step rejection.

use serde::{Deserialize, Serialize};

use crate::dual::{DualCurve, PrimalPoint};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::ratchet_blocked::{solve_boundary, Binding, MStar};

/// Version of the serialized [`MovingBoundary`] document.
pub const BOUNDARY_SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Reduced system in (m, q)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct System<'a> {
    model: &'a Model,
    b1: f64,
    b2: f64,
    s: f64,
}

impl<'a> System<'a> {
    fn new(model: &'a Model) -> Self {
        let (b1, b2) = (model.constants.b1, model.constants.b2);
        System {
            model,
            b1,
            b2,
            s: b1 - b2,
        }
    }

    fn k(&self, m: f64) -> f64 {
        self.model.consumption.rate(m) / self.model.params.r
    }

    fn kp(&self, m: f64) -> f64 {
        self.model.consumption.marginal(m) / self.model.params.r
    }

    /// `(q^(B1-B2), q^(1-B2))`.
    fn parts(&self, q: f64) -> (f64, f64) {
        if q == 0.0 {
            return (0.0, 0.0);
        }
        let l = q.ln();
        ((self.s * l).exp(), ((1.0 - self.b2) * l).exp())
    }

    /// `1/y0` implied by the constraint at ratio `q`.
    fn v(&self, m: f64, q: f64) -> f64 {
        let (b1, b2, s) = (self.b1, self.b2, self.s);
        let k = self.k(m);
        let (t, u) = self.parts(q);
        ((k - m) * s * u - k * (b1 * (1.0 - b2) * t + (b1 - 1.0) * b2)) / (b1 * b2 * (t - 1.0))
    }

    fn v_m(&self, m: f64, q: f64) -> f64 {
        let (b1, b2, s) = (self.b1, self.b2, self.s);
        let kp = self.kp(m);
        let (t, u) = self.parts(q);
        ((kp - 1.0) * s * u - kp * (b1 * (1.0 - b2) * t + (b1 - 1.0) * b2)) / (b1 * b2 * (t - 1.0))
    }

    fn v_q(&self, m: f64, q: f64) -> f64 {
        if q == 0.0 {
            return 0.0;
        }
        let (b1, b2, s) = (self.b1, self.b2, self.s);
        let k = self.k(m);
        let (t, _) = self.parts(q);
        let l = q.ln();
        let q_s1 = ((s - 1.0) * l).exp();
        let dn = b1 * b2 * (t - 1.0);
        let np = (k - m) * s * (1.0 - b2) * (-b2 * l).exp() - k * b1 * (1.0 - b2) * s * q_s1;
        let dp = b1 * b2 * s * q_s1;
        (np - self.v(m, q) * dp) / dn
    }

    /// Total derivative `dv/dm` required by the differential relation.
    fn dv_dm(&self, m: f64, v: f64, q: f64) -> f64 {
        let (b1, b2, s) = (self.b1, self.b2, self.s);
        let (k, kp) = (self.k(m), self.kp(m));
        let (t, u) = self.parts(q);
        let ratio = ((1.0 - b2) * t + (b1 - 1.0) - s * u) / (b1 * b2 * (t - 1.0));
        -kp * ratio * b1 * b2 * v / (b1 * b2 * v + k * (b1 - 1.0) * (1.0 - b2))
    }

    /// `dq/dm`.
    fn rhs(&self, m: f64, q: f64) -> f64 {
        let v = self.v(m, q);
        (self.dv_dm(m, v, q) - self.v_m(m, q)) / self.v_q(m, q)
    }

    /// Stage is on the admissible (right) branch of the constraint.
    fn admissible(&self, m: f64, q: f64) -> bool {
        q > 0.0 && q < 1.0 && self.v_q(m, q) < 0.0 && self.v(m, q) > 0.0
    }

    /// Dual curve for `(m, q)`.
    fn curve(&self, m: f64, q: f64) -> DualCurve {
        let (b1, b2, s) = (self.b1, self.b2, self.s);
        let k = self.k(m);
        let y0 = 1.0 / self.v(m, q);
        DualCurve {
            b1,
            b2,
            k,
            m,
            anchor: y0,
            a1: -b2 / s - k * (1.0 - b2) / s * y0,
            a2: b1 / s - k * (b1 - 1.0) / s * y0,
            y_lo: q * y0,
            y_hi: y0,
        }
    }

    /// Constraint residual in the form multiplied through by `q^(1-B2)`,
    /// relative to its largest term.
    fn residual(&self, m: f64, y0: f64, q: f64) -> f64 {
        let (b1, b2, s) = (self.b1, self.b2, self.s);
        let k = self.k(m);
        let (t, u) = self.parts(q);
        let v = 1.0 / y0;
        let terms = [
            -(k - m) * u,
            v * b1 * b2 / s * (t - 1.0),
            k * b1 * (1.0 - b2) / s * t,
            k * (b1 - 1.0) * b2 / s,
        ];
        let scale = terms.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        terms.iter().sum::<f64>().abs() / scale
    }
}

// ---------------------------------------------------------------------------
// Pointwise operations
// ---------------------------------------------------------------------------

fn require_below_safe(model: &Model, m: f64) -> Result<()> {
    if !(m > 0.0 && model.below_safe(m)) {
        return Err(Error::OutOfRegime(format!(
            "m = {m} is not below its safe level"
        )));
    }
    Ok(())
}

/// Relative residual of the algebraic boundary constraint at `(m, y0, y_m)`.
pub fn constraint_residual(model: &Model, m: f64, y0: f64, ym: f64) -> f64 {
    System::new(model).residual(m, y0, ym / y0)
}

/// Solves the algebraic constraint for `y_m` on the admissible branch
/// `y_m / y0 >= 1 / z(m)`, where `z(m)` is the static ratio.
pub fn solve_ym_given_y0(model: &Model, m: f64, y0: f64) -> Result<f64> {
    require_below_safe(model, m)?;
    if !(y0 > 0.0 && y0.is_finite()) {
        return Err(Error::InvalidState(format!("y0 = {y0} must be positive")));
    }
    let sys = System::new(model);
    let v = 1.0 / y0;
    let fold = solve_boundary(model, m)?;
    let q_fold = 1.0 / fold.ratio;
    let v_fold = sys.v(m, q_fold);
    if v > v_fold {
        // The fold is a double root; accept it when v exceeds the fold
        // value by rounding only.
        if v - v_fold <= 1e-12 * v_fold {
            return Ok(q_fold * y0);
        }
        return Err(Error::NoRoot { m, y0 });
    }
    let (mut lo, mut hi) = (q_fold, 1.0 - 1e-12);
    if sys.v(m, hi) > v {
        return Err(Error::NoRoot { m, y0 });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sys.v(m, mid) > v {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 2.0 * f64::EPSILON * hi {
            break;
        }
    }
    let q = 0.5 * (lo + hi);
    Ok(q * y0)
}

/// Slope `y0'(m)` from the differential boundary relation.
pub fn y0_derivative(model: &Model, m: f64, y0: f64, ym: f64) -> Result<f64> {
    require_below_safe(model, m)?;
    let (b1, b2) = (model.constants.b1, model.constants.b2);
    let s = b1 - b2;
    let k = model.safe_level(m);
    let kp = model.consumption.marginal(m) / model.params.r;
    let q = ym / y0;
    let l = q.ln();
    let qa = ((b1 - 1.0) * l).exp();
    let qb = ((b2 - 1.0) * l).exp();
    let bracket = b1 * b2 / (s * y0) + k * (b1 - 1.0) * (1.0 - b2) / s;
    let coefficient = (qa - qb) * bracket;
    let rhs = kp * ((1.0 - b2) / s * qa + (b1 - 1.0) / s * qb - 1.0);
    if coefficient.abs() < 1e-14 {
        return Err(Error::SingularDerivative { m, coefficient });
    }
    Ok(y0 * rhs / coefficient)
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationConfig {
    /// Maximum step is `(m* - m0) / min_intervals`.
    pub min_intervals: usize,
    /// Length of the implicit first step as a fraction of the maximum step.
    pub first_step_fraction: f64,
    /// Log-spaced probes used to bracket the first-step root.
    pub scan_points: usize,
    /// Largest accepted relative change of `q` per step.
    pub max_relative_change: f64,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig {
            min_intervals: 200,
            first_step_fraction: 1e-4,
            scan_points: 2000,
            max_relative_change: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryNode {
    pub m: f64,
    /// `y_m / y0`.
    pub q: f64,
    /// Interpolation slope `dq/dm` (monotonicity-limited).
    pub slope: f64,
    pub y0: f64,
    pub ym: f64,
    pub d1: f64,
    pub d2: f64,
    /// Relative residual of the algebraic constraint.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub first_step: f64,
    pub max_residual: f64,
}

/// Tabulated moving boundary on `[m0, m*]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingBoundary {
    pub schema_version: u32,
    pub model: Model,
    pub m0: f64,
    pub m_star: f64,
    pub binding: Binding,
    pub config: IntegrationConfig,
    pub stats: IntegrationStats,
    /// Ascending in `m`; the last node sits at `m*`.
    pub nodes: Vec<BoundaryNode>,
}

fn make_node(sys: &System, m: f64, q: f64, slope: f64) -> BoundaryNode {
    let curve = sys.curve(m, q);
    let (d1, d2) = curve.coefficients();
    let y0 = curve.y_hi;
    BoundaryNode {
        m,
        q,
        slope,
        y0,
        ym: curve.y_lo,
        d1,
        d2,
        residual: sys.residual(m, y0, q),
    }
}

/// Largest root of the backward-Euler equation for the first step.
fn first_step(sys: &System, m1: f64, h1: f64, q_t: f64, scan: usize) -> Result<f64> {
    let q_fold = 1.0 / solve_boundary(sys.model, m1)?.ratio;
    let g = |d: f64| {
        let q = q_fold * (1.0 + d);
        q - q_t + h1 * sys.rhs(m1, q)
    };
    let d_lo: f64 = 1e-12;
    let d_hi = (1.0 - 1e-9) / q_fold - 1.0;
    if !(d_hi > d_lo) {
        return Err(Error::NoRoot {
            m: m1,
            y0: f64::NAN,
        });
    }
    let (l_lo, l_hi) = (d_lo.ln(), d_hi.ln());
    let probe = |i: usize| (l_lo + (l_hi - l_lo) * i as f64 / (scan - 1) as f64).exp();
    let mut upper = probe(scan - 1);
    let mut g_upper = g(upper);
    for i in (0..scan - 1).rev() {
        let lower = probe(i);
        let g_lower = g(lower);
        if g_lower.is_finite() && g_upper.is_finite() && g_lower.signum() != g_upper.signum() {
            let (mut a, mut b, ga) = (lower, upper, g_lower);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                let gm = g(mid);
                if gm.signum() == ga.signum() {
                    a = mid;
                } else {
                    b = mid;
                }
                if b - a <= 4.0 * f64::EPSILON * b {
                    break;
                }
            }
            return Ok(q_fold * (1.0 + 0.5 * (a + b)));
        }
        upper = lower;
        g_upper = g_lower;
    }
    Err(Error::NoRoot {
        m: m1,
        y0: f64::NAN,
    })
}

/// One RK4 step of length `h` backward from `(m, q)`; `None` if a stage
/// leaves the admissible branch or the step changes `q` too much.
fn rk4_back(sys: &System, m: f64, q: f64, h: f64, max_change: f64) -> Option<(f64, f64)> {
    let ok = |mm: f64, qq: f64| sys.admissible(mm, qq);
    let k1 = sys.rhs(m, q);
    let q2 = q - 0.5 * h * k1;
    if !k1.is_finite() || !ok(m - 0.5 * h, q2) {
        return None;
    }
    let k2 = sys.rhs(m - 0.5 * h, q2);
    let q3 = q - 0.5 * h * k2;
    if !k2.is_finite() || !ok(m - 0.5 * h, q3) {
        return None;
    }
    let k3 = sys.rhs(m - 0.5 * h, q3);
    let q4 = q - h * k3;
    if !k3.is_finite() || !ok(m - h, q4) {
        return None;
    }
    let k4 = sys.rhs(m - h, q4);
    let qn = q - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if !k4.is_finite() || !ok(m - h, qn) || (qn - q).abs() > max_change * q {
        return None;
    }
    Some((qn, sys.rhs(m - h, qn)))
}

/// Fritsch-Carlson limiting of node slopes so the interpolant of `q` is
/// monotone wherever the data are.
fn limit_slopes(nodes: &mut [BoundaryNode]) {
    let n = nodes.len();
    if n < 2 {
        return;
    }
    let secant: Vec<f64> = nodes
        .windows(2)
        .map(|w| (w[1].q - w[0].q) / (w[1].m - w[0].m))
        .collect();
    for i in 0..n {
        let left = if i > 0 { Some(secant[i - 1]) } else { None };
        let right = if i < n - 1 { Some(secant[i]) } else { None };
        if let (Some(a), Some(b)) = (left, right) {
            if a * b <= 0.0 {
                nodes[i].slope = 0.0;
            }
        }
    }
    for (i, &d) in secant.iter().enumerate() {
        if d == 0.0 {
            nodes[i].slope = 0.0;
            nodes[i + 1].slope = 0.0;
            continue;
        }
        let (a, b) = (nodes[i].slope / d, nodes[i + 1].slope / d);
        if a < 0.0 {
            nodes[i].slope = 0.0;
        }
        if b < 0.0 {
            nodes[i + 1].slope = 0.0;
        }
        let r2 = a * a + b * b;
        if r2 > 9.0 {
            let tau = 3.0 / r2.sqrt();
            nodes[i].slope = tau * a * d;
            nodes[i + 1].slope = tau * b * d;
        }
    }
}

/// Integrates the moving boundary backward from `m*` to `m0`.
pub fn integrate_boundaries(
    model: &Model,
    m0: f64,
    m_star: &MStar,
    cfg: &IntegrationConfig,
) -> Result<MovingBoundary> {
    let sys = System::new(model);
    let m_t = m_star.m_star;
    if !(m0 > 0.0 && m0 <= m_t) {
        return Err(Error::PreconditionViolation(format!(
            "m0 = {m0} must lie in (0, m* = {m_t}]"
        )));
    }
    if cfg.min_intervals == 0 || cfg.scan_points < 2 || !(cfg.first_step_fraction > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "bad integration configuration {cfg:?}"
        )));
    }
    let q_t = match m_star.binding {
        Binding::Condition => {
            let b = solve_boundary(model, m_t)?;
            1.0 / b.ratio
        }
        Binding::SafeLevel => 0.0,
    };

    let mut stats = IntegrationStats {
        accepted_steps: 0,
        rejected_steps: 0,
        first_step: 0.0,
        max_residual: 0.0,
    };
    // (m, q, dq/dm) in descending m
    let mut path: Vec<(f64, f64, f64)> = Vec::new();

    if m_t - m0 > 1e-12 * m_t {
        let h_max = (m_t - m0) / cfg.min_intervals as f64;
        let h1 = (h_max * cfg.first_step_fraction).min(m_t - m0);
        let m1 = m_t - h1;
        let q1 = first_step(&sys, m1, h1, q_t, cfg.scan_points)?;
        stats.first_step = h1;
        path.push((m_t, q_t, (q1 - q_t) / -h1));
        path.push((m1, q1, sys.rhs(m1, q1)));
        stats.accepted_steps = 1;

        let (mut m, mut q) = (m1, q1);
        let mut h = h1;
        let h_floor = 1e-14 * m_t;
        while m - m0 > 1e-12 * m_t {
            h = (2.0 * h).min(h_max).min(m - m0);
            loop {
                match rk4_back(&sys, m, q, h, cfg.max_relative_change) {
                    Some((qn, slope)) => {
                        m = if (m - h - m0).abs() <= 1e-12 * m_t {
                            m0
                        } else {
                            m - h
                        };
                        q = qn;
                        path.push((m, q, slope));
                        stats.accepted_steps += 1;
                        break;
                    }
                    None => {
                        stats.rejected_steps += 1;
                        h *= 0.5;
                        if h < h_floor {
                            return Err(Error::ConvergenceError(format!(
                                "boundary step collapsed below {h_floor:e} at m = {m}"
                            )));
                        }
                    }
                }
            }
        }
    } else {
        path.push((m_t, q_t, 0.0));
    }

    let mut nodes: Vec<BoundaryNode> = path
        .iter()
        .rev()
        .map(|&(m, q, slope)| make_node(&sys, m, q, slope))
        .collect();
    limit_slopes(&mut nodes);
    stats.max_residual = nodes.iter().fold(0.0f64, |a, n| a.max(n.residual));
    if let Some(bad) = nodes.iter().find(|n| !(n.y0 > 0.0 && n.y0.is_finite())) {
        return Err(Error::ConvergenceError(format!(
            "non-positive y0 at m = {}",
            bad.m
        )));
    }
    Ok(MovingBoundary {
        schema_version: BOUNDARY_SCHEMA_VERSION,
        model: *model,
        m0,
        m_star: m_t,
        binding: m_star.binding,
        config: *cfg,
        stats,
        nodes,
    })
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

impl MovingBoundary {
    fn check_m(&self, m: f64) -> Result<()> {
        let slack = 1e-12 * self.m_star;
        if m >= self.m0 - slack && m <= self.m_star + slack {
            Ok(())
        } else {
            Err(Error::DomainError {
                value: m,
                lo: self.m0,
                hi: self.m_star,
            })
        }
    }

    /// Interpolated ratio `y_m / y0` at `m`.
    pub fn ratio_at(&self, m: f64) -> Result<f64> {
        self.check_m(m)?;
        let n = &self.nodes;
        if n.len() == 1 {
            return Ok(n[0].q);
        }
        let m = m.clamp(self.m0, self.m_star);
        let i = match n.binary_search_by(|x| x.m.partial_cmp(&m).unwrap()) {
            Ok(i) => return Ok(n[i].q),
            Err(i) => i.clamp(1, n.len() - 1) - 1,
        };
        let (a, b) = (&n[i], &n[i + 1]);
        let h = b.m - a.m;
        let t = (m - a.m) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        Ok(h00 * a.q + h10 * h * a.slope + h01 * b.q + h11 * h * b.slope)
    }

    /// Dual curve at maximum wealth `m`.
    pub fn curve_at(&self, m: f64) -> Result<DualCurve> {
        let q = self.ratio_at(m)?;
        Ok(System::new(&self.model).curve(m.clamp(self.m0, self.m_star), q))
    }

    /// `(y0(m), y_m(m))`.
    pub fn boundary_at(&self, m: f64) -> Result<(f64, f64)> {
        let c = self.curve_at(m)?;
        Ok((c.y_hi, c.y_lo))
    }

    /// `(D1(m), D2(m))`.
    pub fn coefficients_at(&self, m: f64) -> Result<(f64, f64)> {
        Ok(self.curve_at(m)?.coefficients())
    }

    pub fn primal(&self, w: f64, m: f64) -> Result<PrimalPoint> {
        self.curve_at(m)?.primal(w)
    }

    /// Minimum ruin probability at `(w, m)`.
    pub fn psi(&self, w: f64, m: f64) -> Result<f64> {
        Ok(self.primal(w, m)?.psi)
    }

    /// Optimal risky amount on `0 < w < m` (and `w = m` when `m < m*`).
    pub fn pi(&self, w: f64, m: f64) -> Result<f64> {
        if !(w > 0.0 && w <= m) {
            return Err(Error::OutOfRegime(format!("w = {w} outside (0, {m}]")));
        }
        self.pi_unchecked(w, m)
    }

    pub fn pi_unchecked(&self, w: f64, m: f64) -> Result<f64> {
        let c = self.curve_at(m)?;
        let y = c.invert(w)?;
        Ok(-self.model.params.merton_ratio() * c.scaled_curvature(y))
    }

    /// `d psi(w, m) / dm` at `w = m`, via the dual at fixed `y = y_m(m)`.
    pub fn diagonal_m_derivative(&self, m: f64) -> Result<f64> {
        self.check_m(m)?;
        let ym = self.curve_at(m)?.y_lo;
        let h = 1e-5 * m;
        let lo = (m - h).max(self.m0);
        let hi = (m + h).min(self.m_star);
        let f_hi = self.curve_at(hi)?.value_unchecked(ym);
        let f_lo = self.curve_at(lo)?.value_unchecked(ym);
        Ok((f_hi - f_lo) / (hi - lo))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("boundary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mb: MovingBoundary =
            serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))?;
        if mb.schema_version != BOUNDARY_SCHEMA_VERSION {
            return Err(Error::Serialization(format!(
                "schema version {} not supported (expected {BOUNDARY_SCHEMA_VERSION})",
                mb.schema_version
            )));
        }
        if mb.nodes.is_empty() {
            return Err(Error::Serialization("boundary has no nodes".into()));
        }
        Ok(mb)
    }
}

/// Free-function form of [`MovingBoundary::coefficients_at`].
pub fn coefficients_at(mb: &MovingBoundary, m: f64) -> Result<(f64, f64)> {
    mb.coefficients_at(m)
}

/// Free-function form of [`MovingBoundary::psi`].
pub fn psi_active(mb: &MovingBoundary, w: f64, m: f64) -> Result<f64> {
    mb.psi(w, m)
}

/// Free-function form of [`MovingBoundary::pi`].
pub fn pi_active(mb: &MovingBoundary, w: f64, m: f64) -> Result<f64> {
    mb.pi(w, m)
}

// ---------------------------------------------------------------------------

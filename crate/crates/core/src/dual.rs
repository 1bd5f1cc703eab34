//! Concave dual functions of the form `a1 (y/y_a)^B1 + a2 (y/y_a)^B2 + k y`.
//!
//! Both the blocked and the ratcheting solutions share this shape; only the
//! coefficients differ. Coefficients are stored pre-multiplied by powers of an
//! anchor point `y_a` so that evaluation works with the ratio `y/y_a` and
//! never forms `y^B` for tiny `y` directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Result of evaluating the primal value through its dual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimalPoint {
    /// Dual variable solving `f'(y) = w`.
    pub y: f64,
    pub psi: f64,
    /// `psi_w = -y`.
    pub psi_w: f64,
    /// `psi_ww = -1 / f''(y)`; infinite where `f''` vanishes.
    pub psi_ww: f64,
    /// `psi_w / psi_ww = y f''(y)`, finite everywhere on the domain.
    pub slope_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualCurve {
    pub b1: f64,
    pub b2: f64,
    /// Safe level c(m)/r.
    pub k: f64,
    /// Maximum wealth the curve belongs to.
    pub m: f64,
    pub anchor: f64,
    /// `D1 * anchor^B1`.
    pub a1: f64,
    /// `D2 * anchor^B2`.
    pub a2: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

#[inline]
fn scaled(a: f64, b: f64, ln_rho: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * (b * ln_rho).exp()
    }
}

impl DualCurve {
    #[inline]
    fn terms(&self, y: f64) -> (f64, f64) {
        let ln_rho = (y / self.anchor).ln();
        (
            scaled(self.a1, self.b1, ln_rho),
            scaled(self.a2, self.b2, ln_rho),
        )
    }

    /// Unscaled coefficients `(D1, D2)`.
    pub fn coefficients(&self) -> (f64, f64) {
        let ln_a = self.anchor.ln();
        (
            scaled(self.a1, -self.b1, ln_a),
            scaled(self.a2, -self.b2, ln_a),
        )
    }

    pub fn contains(&self, y: f64) -> bool {
        let slack = 1e-12 * self.y_hi;
        y >= self.y_lo - slack && y <= self.y_hi + slack
    }

    fn check(&self, y: f64) -> Result<()> {
        if self.contains(y) {
            Ok(())
        } else {
            Err(Error::DomainError {
                value: y,
                lo: self.y_lo,
                hi: self.y_hi,
            })
        }
    }

    pub fn value(&self, y: f64) -> Result<f64> {
        self.check(y)?;
        Ok(self.value_unchecked(y))
    }

    pub fn value_unchecked(&self, y: f64) -> f64 {
        if y == 0.0 {
            return 0.0;
        }
        let (t1, t2) = self.terms(y);
        t1 + t2 + self.k * y
    }

    pub fn slope(&self, y: f64) -> Result<f64> {
        self.check(y)?;
        Ok(self.slope_unchecked(y))
    }

    pub fn slope_unchecked(&self, y: f64) -> f64 {
        if y == 0.0 {
            return self.k;
        }
        let (t1, t2) = self.terms(y);
        (self.b1 * t1 + self.b2 * t2) / y + self.k
    }

    pub fn curvature(&self, y: f64) -> Result<f64> {
        self.check(y)?;
        Ok(self.curvature_unchecked(y))
    }

    pub fn curvature_unchecked(&self, y: f64) -> f64 {
        let (t1, t2) = self.terms(y);
        let (b1, b2) = (self.b1, self.b2);
        (b1 * (b1 - 1.0) * t1 + b2 * (b2 - 1.0) * t2) / (y * y)
    }

    /// `y f''(y)`, which stays finite as `y -> 0`.
    pub fn scaled_curvature(&self, y: f64) -> f64 {
        if y == 0.0 {
            return 0.0;
        }
        let (t1, t2) = self.terms(y);
        let (b1, b2) = (self.b1, self.b2);
        (b1 * (b1 - 1.0) * t1 + b2 * (b2 - 1.0) * t2) / y
    }

    pub fn third_derivative(&self, y: f64) -> f64 {
        let (t1, t2) = self.terms(y);
        let (b1, b2) = (self.b1, self.b2);
        (b1 * (b1 - 1.0) * (b1 - 2.0) * t1 + b2 * (b2 - 1.0) * (b2 - 2.0) * t2) / (y * y * y)
    }

    /// Residual of `delta y^2 f'' - (r - lambda) y f' - lambda f + c y = 0`,
    /// relative to the largest term.
    pub fn ode_residual(&self, y: f64, r: f64, lambda: f64, delta: f64) -> f64 {
        let f = self.value_unchecked(y);
        let f1 = self.slope_unchecked(y);
        let f2 = self.curvature_unchecked(y);
        let c = self.k * r;
        let terms = [
            delta * y * y * f2,
            -(r - lambda) * y * f1,
            -lambda * f,
            c * y,
        ];
        let scale = terms.iter().fold(0.0f64, |a, t| a.max(t.abs()));
        terms.iter().sum::<f64>().abs() / scale.max(f64::MIN_POSITIVE)
    }

    /// Unique `y` in `[y_lo, y_hi]` with `f'(y) = w`, found by bisection.
    pub fn invert(&self, w: f64) -> Result<f64> {
        if !(w >= 0.0 && w <= self.m) {
            return Err(Error::DomainError {
                value: w,
                lo: 0.0,
                hi: self.m,
            });
        }
        if w == 0.0 {
            return Ok(self.y_hi);
        }
        if w == self.m {
            return Ok(self.y_lo);
        }
        self.bisect_slope(w)
    }

    /// Bisection on the decreasing slope without endpoint shortcuts.
    pub fn bisect_slope(&self, w: f64) -> Result<f64> {
        let tol = 1e-12 * self.m.max(1.0);
        let (mut lo, mut hi) = (self.y_lo, self.y_hi);
        let mut best = (f64::INFINITY, 0.5 * (lo + hi));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let g = self.slope_unchecked(mid) - w;
            if g.abs() < best.0 {
                best = (g.abs(), mid);
            }
            if g > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 2.0 * f64::EPSILON * hi || g == 0.0 {
                break;
            }
        }
        if best.0 <= tol {
            Ok(best.1)
        } else {
            Err(Error::ConvergenceError(format!(
                "dual inversion at w = {w}: best residual {:e} exceeds {tol:e}",
                best.0
            )))
        }
    }

    /// Primal value and derivatives at wealth `w` via the Legendre transform.
    pub fn primal(&self, w: f64) -> Result<PrimalPoint> {
        let y = self.invert(w)?;
        let f = self.value_unchecked(y);
        let f2 = self.curvature_unchecked(y);
        Ok(PrimalPoint {
            y,
            psi: f - w * y,
            psi_w: -y,
            psi_ww: if f2 == 0.0 { f64::INFINITY } else { -1.0 / f2 },
            slope_ratio: self.scaled_curvature(y),
        })
    }
}

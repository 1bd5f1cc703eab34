//! Market and consumption primitives, derived constants and the regime
//! classifier.
//!
//! A [`Model`] bundles validated market parameters with a consumption rule
//! and caches the constants every solver needs. All types are immutable after
//! construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratchet_blocked;

// ---------------------------------------------------------------------------
// Market parameters
// ---------------------------------------------------------------------------

/// Riskless rate, risky drift and volatility, and the hazard rate of death.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub r: f64,
    pub mu: f64,
    pub sigma: f64,
    pub lambda: f64,
}

impl MarketParams {
    pub fn new(r: f64, mu: f64, sigma: f64, lambda: f64) -> Result<Self> {
        let p = MarketParams {
            r,
            mu,
            sigma,
            lambda,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let MarketParams {
            r,
            mu,
            sigma,
            lambda,
        } = *self;
        if ![r, mu, sigma, lambda].iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParams("parameters must be finite".into()));
        }
        if r <= 0.0 {
            return Err(Error::InvalidParams(format!("r = {r} must be positive")));
        }
        if sigma <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "sigma = {sigma} must be positive"
            )));
        }
        if lambda <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "lambda = {lambda} must be positive"
            )));
        }
        if mu <= r {
            return Err(Error::InvalidParams(format!(
                "mu = {mu} must exceed r = {r}"
            )));
        }
        Ok(())
    }

    /// Market price of risk (mu - r) / sigma.
    pub fn sharpe(&self) -> f64 {
        (self.mu - self.r) / self.sigma
    }

    /// Merton ratio (mu - r) / sigma^2.
    pub fn merton_ratio(&self) -> f64 {
        (self.mu - self.r) / (self.sigma * self.sigma)
    }
}

// ---------------------------------------------------------------------------
// Derived constants
// ---------------------------------------------------------------------------

/// Dimensionless constants shared by the closed-form and dual solutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub delta: f64,
    pub gamma: f64,
    pub b1: f64,
    pub b2: f64,
}

/// Computes delta, gamma and the two roots of the dual characteristic
/// quadratic `delta B^2 - (r - lambda + delta) B - lambda = 0`.
pub fn derive_constants(params: &MarketParams) -> Result<DerivedConstants> {
    params.validate()?;
    let MarketParams { r, lambda, .. } = *params;
    let theta = params.sharpe();
    let delta = 0.5 * theta * theta;

    let a = r + lambda + delta;
    let disc = (a * a - 4.0 * r * lambda).sqrt();
    // Larger root computed directly, smaller via the product r*lambda to
    // avoid cancellation when r*lambda is tiny.
    let gamma = (a + disc) / (2.0 * r);

    let b = r - lambda + delta;
    let disc_b = (b * b + 4.0 * lambda * delta).sqrt();
    let (b1, b2) = if b >= 0.0 {
        let b1 = (b + disc_b) / (2.0 * delta);
        (b1, -lambda / (delta * b1))
    } else {
        let b2 = (b - disc_b) / (2.0 * delta);
        (-lambda / (delta * b2), b2)
    };

    let c = DerivedConstants {
        delta,
        gamma,
        b1,
        b2,
    };
    if !(gamma > 1.0 && b1 > 1.0 && b2 < 0.0) || !c.b1.is_finite() {
        return Err(Error::InvalidParams(format!(
            "derived constants out of range: {c:?}"
        )));
    }
    Ok(c)
}

// ---------------------------------------------------------------------------
// Consumption
// ---------------------------------------------------------------------------

/// Consumption rate as a function of maximum wealth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ConsumptionSpec {
    /// `c(m) = intercept + slope * m`.
    Affine { slope: f64, intercept: f64 },
    /// `c(m) = scale * m^exponent`.
    Power { scale: f64, exponent: f64 },
}

impl ConsumptionSpec {
    pub fn affine(slope: f64, intercept: f64) -> Result<Self> {
        let c = ConsumptionSpec::Affine { slope, intercept };
        c.validate()?;
        Ok(c)
    }

    pub fn power(scale: f64, exponent: f64) -> Result<Self> {
        let c = ConsumptionSpec::Power { scale, exponent };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ConsumptionSpec::Affine { slope, intercept } => {
                if !(slope.is_finite() && intercept.is_finite()) {
                    return Err(Error::InvalidConsumption("non-finite coefficient".into()));
                }
                if slope < 0.0 || intercept < 0.0 {
                    return Err(Error::InvalidConsumption(format!(
                        "affine slope {slope} and intercept {intercept} must be non-negative"
                    )));
                }
                if slope == 0.0 && intercept == 0.0 {
                    return Err(Error::InvalidConsumption(
                        "affine consumption is identically zero".into(),
                    ));
                }
            }
            ConsumptionSpec::Power { scale, exponent } => {
                if !(scale.is_finite() && exponent.is_finite()) || scale <= 0.0 || exponent <= 0.0 {
                    return Err(Error::InvalidConsumption(format!(
                        "power scale {scale} and exponent {exponent} must be positive"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Consumption rate c(m).
    pub fn rate(&self, m: f64) -> f64 {
        match *self {
            ConsumptionSpec::Affine { slope, intercept } => intercept + slope * m,
            ConsumptionSpec::Power { scale, exponent } => scale * m.powf(exponent),
        }
    }

    /// Derivative c'(m).
    pub fn marginal(&self, m: f64) -> f64 {
        match *self {
            ConsumptionSpec::Affine { slope, .. } => slope,
            ConsumptionSpec::Power { scale, exponent } => scale * exponent * m.powf(exponent - 1.0),
        }
    }

    /// Rejects rules with c'(m) <= 0, which the ratchet solvers cannot handle.
    pub fn require_increasing(&self, m: f64) -> Result<()> {
        let d = self.marginal(m);
        if d > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConsumption(format!(
                "ratchet computations need c'(m) > 0, got {d} at m = {m}"
            )))
        }
    }
}

// ---------------------------------------------------------------------------
// State and model bundle
// ---------------------------------------------------------------------------

/// Current wealth and running maximum of wealth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub w: f64,
    pub m: f64,
}

impl AgentState {
    pub fn new(w: f64, m: f64) -> Result<Self> {
        let s = AgentState { w, m };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w.is_finite() && self.m.is_finite()) {
            return Err(Error::InvalidState("non-finite state".into()));
        }
        if self.m <= 0.0 {
            return Err(Error::InvalidState(format!(
                "m = {} must be positive",
                self.m
            )));
        }
        if self.w > self.m {
            return Err(Error::InvalidState(format!(
                "w = {} exceeds maximum wealth m = {}",
                self.w, self.m
            )));
        }
        Ok(())
    }
}

/// Validated market parameters, consumption rule and derived constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub params: MarketParams,
    pub consumption: ConsumptionSpec,
    pub constants: DerivedConstants,
}

impl Model {
    pub fn new(params: MarketParams, consumption: ConsumptionSpec) -> Result<Self> {
        consumption.validate()?;
        let constants = derive_constants(&params)?;
        Ok(Model {
            params,
            consumption,
            constants,
        })
    }

    /// Safe level c(m)/r.
    pub fn safe_level(&self, m: f64) -> f64 {
        safe_level(&self.consumption, self.params.r, m)
    }

    /// True when m < c(m)/r, i.e. the maximum sits below the safe level.
    pub fn below_safe(&self, m: f64) -> bool {
        m < self.safe_level(m)
    }
}

/// Wealth c(m)/r above which riskless investment funds consumption forever.
pub fn safe_level(consumption: &ConsumptionSpec, r: f64, m: f64) -> f64 {
    consumption.rate(m) / r
}

// ---------------------------------------------------------------------------
// Regimes
// ---------------------------------------------------------------------------

/// Which solver applies at a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Ruined,
    SafeLevel,
    FixedMaxBelowSafe,
    RatchetBlocked,
    RatchetActive,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Ruined => "Ruined",
            Regime::SafeLevel => "SafeLevel",
            Regime::FixedMaxBelowSafe => "FixedMaxBelowSafe",
            Regime::RatchetBlocked => "RatchetBlocked",
            Regime::RatchetActive => "RatchetActive",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Routes a state to its regime. In the ratchet case this solves the static
/// free-boundary problem at `m` to test the no-ratchet condition.
pub fn classify_regime(model: &Model, state: &AgentState) -> Result<Regime> {
    state.validate()?;
    let AgentState { w, m } = *state;
    let safe = model.safe_level(m);
    if w <= 0.0 {
        return Ok(Regime::Ruined);
    }
    if w >= safe {
        return Ok(Regime::SafeLevel);
    }
    if safe <= m {
        return Ok(Regime::FixedMaxBelowSafe);
    }
    let cond = ratchet_blocked::ratchet_condition(model, m)?;
    Ok(if cond.holds {
        Regime::RatchetBlocked
    } else {
        Regime::RatchetActive
    })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn baseline() -> MarketParams {
        MarketParams::new(0.05, 0.10, 0.20, 0.04).unwrap()
    }

    #[test]
    fn baseline_constants() {
        let c = derive_constants(&baseline()).unwrap();
        assert_eq!(c.delta, 0.03125);
        assert!((c.gamma - 2.0311307165016466).abs() < 1e-13);
        assert!((c.b1 - 1.9698091464026355).abs() < 1e-13);
        assert!((c.b2 + 0.6498091464026353).abs() < 1e-13);
        assert!((c.b1 - c.gamma / (c.gamma - 1.0)).abs() < 1e-12 * c.b1);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(matches!(
            MarketParams::new(0.05, 0.05, 0.2, 0.04),
            Err(Error::InvalidParams(_))
        ));
        assert!(MarketParams::new(0.0, 0.1, 0.2, 0.04).is_err());
        assert!(MarketParams::new(0.05, 0.1, 0.0, 0.04).is_err());
        assert!(MarketParams::new(0.05, 0.1, 0.2, 0.0).is_err());
        let p = MarketParams {
            r: 0.05,
            mu: 0.05,
            sigma: 0.2,
            lambda: 0.04,
        };
        assert!(derive_constants(&p).is_err());
    }

    #[test]
    fn safe_levels() {
        let r = 0.05;
        assert!(
            (safe_level(&ConsumptionSpec::affine(0.04, 0.0).unwrap(), r, 100.0) - 80.0).abs()
                < 1e-12
        );
        assert!(
            (safe_level(&ConsumptionSpec::affine(0.06, 0.0).unwrap(), r, 100.0) - 120.0).abs()
                < 1e-12
        );
        assert_eq!(
            safe_level(&ConsumptionSpec::power(1.0, 1.0).unwrap(), r, 7.0),
            7.0 / r
        );
    }

    #[test]
    fn classification() {
        let p = baseline();
        let m4 = Model::new(p, ConsumptionSpec::affine(0.04, 0.0).unwrap()).unwrap();
        let m6 = Model::new(p, ConsumptionSpec::affine(0.06, 0.0).unwrap()).unwrap();
        let s = |w, m| AgentState::new(w, m).unwrap();
        assert_eq!(
            classify_regime(&m4, &s(-1.0, 100.0)).unwrap(),
            Regime::Ruined
        );
        assert_eq!(
            classify_regime(&m4, &s(40.0, 100.0)).unwrap(),
            Regime::FixedMaxBelowSafe
        );
        assert_eq!(
            classify_regime(&m4, &s(80.0, 100.0)).unwrap(),
            Regime::SafeLevel
        );
        assert_eq!(
            classify_regime(&m6, &s(50.0, 100.0)).unwrap(),
            Regime::RatchetBlocked
        );
    }

    #[test]
    fn state_rejects_w_above_m() {
        assert!(AgentState::new(2.0, 1.0).is_err());
        assert!(AgentState::new(0.5, 0.0).is_err());
    }

    #[test]
    fn consumption_validation() {
        assert!(ConsumptionSpec::affine(0.0, 0.0).is_err());
        assert!(ConsumptionSpec::power(1.0, 0.0).is_err());
        let flat = ConsumptionSpec::affine(0.0, 3.0).unwrap();
        assert!(flat.require_increasing(10.0).is_err());
        let pw = ConsumptionSpec::power(2.0, 0.5).unwrap();
        assert!((pw.marginal(4.0) - 0.5).abs() < 1e-15);
    }
}

//! Closed-form ruin probability when maximum wealth never moves.
//!
//! If `0 < w < c(m)/r <= m`, the optimal agent never lets wealth reach `m`,
//! so consumption stays at `c(m)` and the ruin probability is
//! `(1 - r w / c(m))^gamma`. The same formula with any fixed rate serves as
//! the constant-consumption benchmark in the ratchet regimes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MarketParams, Model};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedMaxSolution {
    pub m: f64,
    pub c_of_m: f64,
    pub r: f64,
    pub gamma: f64,
}

/// Geometric coefficients of the shortfall `Z = c(m)/r - W` under the
/// optimal feedback: `dZ = drift Z dt - vol Z dB`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShortfallCoefficients {
    pub drift: f64,
    pub vol: f64,
}

impl FixedMaxSolution {
    /// Solution at `m`; requires `c(m)/r <= m`.
    pub fn new(model: &Model, m: f64) -> Result<Self> {
        let sol = Self::benchmark(model, m)?;
        if sol.safe_level() > m {
            return Err(Error::OutOfRegime(format!(
                "safe level {} exceeds m = {m}; maximum wealth can move",
                sol.safe_level()
            )));
        }
        Ok(sol)
    }

    /// Constant-consumption ruin probability at rate `c(m)`, with no regime
    /// restriction.
    pub fn benchmark(model: &Model, m: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::InvalidState(format!("m = {m} must be positive")));
        }
        Ok(FixedMaxSolution {
            m,
            c_of_m: model.consumption.rate(m),
            r: model.params.r,
            gamma: model.constants.gamma,
        })
    }

    pub fn safe_level(&self) -> f64 {
        self.c_of_m / self.r
    }

    /// Ruin probability, total on the real line.
    pub fn psi(&self, w: f64) -> f64 {
        if w <= 0.0 {
            return 1.0;
        }
        let x = self.r * w / self.c_of_m;
        if x >= 1.0 {
            return 0.0;
        }
        (self.gamma * (-x).ln_1p()).exp()
    }

    /// First derivative in `w` on `(0, c(m)/r)`.
    pub fn psi_w(&self, w: f64) -> f64 {
        let k = self.safe_level();
        let g = self.gamma;
        -g / k * ((g - 1.0) * (-w / k).ln_1p()).exp()
    }

    /// Second derivative in `w` on `(0, c(m)/r)`.
    pub fn psi_ww(&self, w: f64) -> f64 {
        let k = self.safe_level();
        let g = self.gamma;
        g * (g - 1.0) / (k * k) * ((g - 2.0) * (-w / k).ln_1p()).exp()
    }

    /// Optimal amount in the risky asset on `(0, c(m)/r)`.
    pub fn pi(&self, w: f64, params: &MarketParams) -> Result<f64> {
        let k = self.safe_level();
        if !(w > 0.0 && w < k) {
            return Err(Error::OutOfRegime(format!("w = {w} outside (0, {k})")));
        }
        Ok(self.pi_unchecked(w, params))
    }

    pub fn pi_unchecked(&self, w: f64, params: &MarketParams) -> f64 {
        params.merton_ratio() / (self.gamma - 1.0) * (self.safe_level() - w)
    }

    pub fn shortfall_sde_coefficients(&self, params: &MarketParams) -> ShortfallCoefficients {
        let theta = params.sharpe();
        let delta = 0.5 * theta * theta;
        ShortfallCoefficients {
            drift: params.r - 2.0 * delta / (self.gamma - 1.0),
            vol: theta / (self.gamma - 1.0),
        }
    }
}

/// Free-function form of [`FixedMaxSolution::psi`].
pub fn psi_fixed_max(sol: &FixedMaxSolution, w: f64) -> f64 {
    sol.psi(w)
}

/// Free-function form of [`FixedMaxSolution::pi`].
pub fn pi_fixed_max(sol: &FixedMaxSolution, w: f64, params: &MarketParams) -> Result<f64> {
    sol.pi(w, params)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConsumptionSpec;

    fn sol() -> (Model, FixedMaxSolution) {
        let p = MarketParams::new(0.05, 0.10, 0.20, 0.04).unwrap();
        // c(m) = 4 at m = 100
        let model = Model::new(p, ConsumptionSpec::affine(0.04, 0.0).unwrap()).unwrap();
        let s = FixedMaxSolution::new(&model, 100.0).unwrap();
        (model, s)
    }

    #[test]
    fn endpoints_and_baseline() {
        let (_, s) = sol();
        assert_eq!(s.psi(0.0), 1.0);
        assert_eq!(s.psi(-3.0), 1.0);
        assert_eq!(s.psi(80.0), 0.0);
        assert_eq!(s.psi(1e9), 0.0);
        assert!((s.psi(40.0) - 0.2447).abs() < 1e-3);
        assert!((s.psi(40.0) - 0.5f64.powf(s.gamma)).abs() < 1e-15);
    }

    #[test]
    fn strategy_values() {
        let (model, s) = sol();
        let p = model.params;
        assert!((s.pi(40.0, &p).unwrap() - 48.49).abs() < 0.05);
        let a = s.pi(60.0, &p).unwrap();
        let b = s.pi(40.0, &p).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12 * b);
        assert!(s.pi(80.0 - 1e-9, &p).unwrap() < 1e-8);
        assert!(matches!(s.pi(0.0, &p), Err(Error::OutOfRegime(_))));
        assert!(s.pi(80.0, &p).is_err());
    }

    #[test]
    fn shortfall_coefficients() {
        let (model, s) = sol();
        let c = s.shortfall_sde_coefficients(&model.params);
        assert!((c.vol - 0.24245).abs() < 1e-4);
        assert!((c.drift + 0.01061).abs() < 1e-4);
    }

    #[test]
    fn derivatives_match_differences() {
        let (_, s) = sol();
        for &w in &[5.0, 40.0, 75.0] {
            let h = 1e-4;
            let d1 = (s.psi(w + h) - s.psi(w - h)) / (2.0 * h);
            let d2 = (s.psi(w + h) - 2.0 * s.psi(w) + s.psi(w - h)) / (h * h);
            assert!((d1 - s.psi_w(w)).abs() < 1e-8 * d1.abs());
            assert!((d2 - s.psi_ww(w)).abs() < 1e-4 * d2.abs());
        }
    }

    #[test]
    fn rejects_ratchet_regime() {
        let p = MarketParams::new(0.05, 0.10, 0.20, 0.04).unwrap();
        let model = Model::new(p, ConsumptionSpec::affine(0.06, 0.0).unwrap()).unwrap();
        assert!(matches!(
            FixedMaxSolution::new(&model, 100.0),
            Err(Error::OutOfRegime(_))
        ));
        assert!(FixedMaxSolution::benchmark(&model, 100.0).is_ok());
    }
}

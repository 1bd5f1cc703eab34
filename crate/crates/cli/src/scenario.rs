//! Scenario files: market, consumption rule, state and optional simulation
//! overrides, with units spelled out in the key names.

use serde::{Deserialize, Serialize};

use ratchet_ruin::simulator::{Estimator, Scheme, SimConfig};
use ratchet_ruin::{AgentState, ConsumptionSpec, MarketParams, Model};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Market {
    pub riskless_rate_per_year: f64,
    pub risky_drift_per_year: f64,
    pub volatility_per_sqrt_year: f64,
    pub hazard_rate_per_year: f64,
}

/// Consumption rate per year as a function of maximum wealth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Consumption {
    /// `slope_per_year * m + intercept_per_year`.
    Affine {
        slope_per_year: f64,
        intercept_per_year: f64,
    },
    /// `scale_per_year * m^exponent`.
    Power { scale_per_year: f64, exponent: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct State {
    pub wealth: f64,
    pub max_wealth: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_years: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon_years: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bridge: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    EulerMaruyama,
    ExactShortfallGbm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorName {
    SampledDeath,
    DiscountedRuin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub market: Market,
    pub consumption: Consumption,
    pub state: State,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimOverrides>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario fields are always representable")
    }

    pub fn load(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn params(&self) -> CliResult<MarketParams> {
        let m = &self.market;
        Ok(MarketParams::new(
            m.riskless_rate_per_year,
            m.risky_drift_per_year,
            m.volatility_per_sqrt_year,
            m.hazard_rate_per_year,
        )?)
    }

    pub fn consumption_spec(&self) -> CliResult<ConsumptionSpec> {
        Ok(match self.consumption {
            Consumption::Affine {
                slope_per_year,
                intercept_per_year,
            } => ConsumptionSpec::affine(slope_per_year, intercept_per_year)?,
            Consumption::Power {
                scale_per_year,
                exponent,
            } => ConsumptionSpec::power(scale_per_year, exponent)?,
        })
    }

    pub fn model(&self) -> CliResult<Model> {
        Ok(Model::new(self.params()?, self.consumption_spec()?)?)
    }

    pub fn agent_state(&self) -> CliResult<AgentState> {
        Ok(AgentState::new(self.state.wealth, self.state.max_wealth)?)
    }

    /// Library defaults overlaid by the scenario's `[sim]` table.
    pub fn sim_config(&self) -> SimConfig {
        let mut cfg = SimConfig::default();
        if let Some(s) = &self.sim {
            apply_overrides(&mut cfg, s);
        }
        cfg
    }
}

/// Overlays every field that is set.
pub fn apply_overrides(cfg: &mut SimConfig, s: &SimOverrides) {
    if let Some(v) = s.dt_years {
        cfg.dt = v;
    }
    if let Some(v) = s.paths {
        cfg.n_paths = v;
    }
    if let Some(v) = s.horizon_years {
        cfg.t_max = Some(v);
    }
    if let Some(v) = s.seed {
        cfg.seed = v;
    }
    if let Some(v) = s.scheme {
        cfg.scheme = match v {
            SchemeName::EulerMaruyama => Scheme::EulerMaruyama,
            SchemeName::ExactShortfallGbm => Scheme::ExactShortfallGbm,
        };
    }
    if let Some(v) = s.estimator {
        cfg.estimator = match v {
            EstimatorName::SampledDeath => Estimator::SampledDeath,
            EstimatorName::DiscountedRuin => Estimator::DiscountedRuin,
        };
    }
    if let Some(v) = s.bridge {
        cfg.bridge = v;
    }
    if let Some(v) = s.threads {
        cfg.threads = Some(v);
    }
}

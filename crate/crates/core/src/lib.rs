//! Minimum probability of lifetime ruin when consumption ratchets with the
//! running maximum of wealth.
//!
//! The crate is organised by regime:
//!
//! - [`model`]: primitives, derived constants, regime classification.
//! - [`closed_form`]: maximum wealth fixed, consumption constant.
//! - [`ratchet_blocked`]: static free boundary, wealth held below `m`.
//! - [`ratchet_active`]: moving free boundary, wealth allowed to ratchet.
//! - [`simulator`]: Monte Carlo ruin estimates under feedback strategies.
//! - [`diagnostics`]: residual and inequality checks across solvers.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closed_form;
pub mod diagnostics;
pub mod dual;
pub mod error;
pub mod model;
pub mod ratchet_active;
pub mod ratchet_blocked;
pub mod simulator;

pub use error::{Error, Result};
pub use model::{
    classify_regime, derive_constants, safe_level, AgentState, ConsumptionSpec, DerivedConstants,
    MarketParams, Model, Regime,
};

/// Library version, echoed in every CLI record.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

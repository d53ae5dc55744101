//! Arbitrage-free and marginal utility-based prices of contingent claims in
//! one-period incomplete markets.
//!
//! The crate computes the endowment cone, its polar, arbitrage-free price
//! sets, the maximal expected utility `u(x, q)`, its subdifferential and the
//! resulting marginal price sets. It also provides numerical verifiers for the
//! structural results linking them.

pub mod arbitrage;
pub mod cone;
pub mod config;
pub mod density;
pub mod error;
pub mod lp;
pub mod marginal;
pub mod market;
pub mod model;
pub mod optimize;
pub mod quadrature;
pub mod random;
pub mod report;
pub mod sec4;
pub mod utility;
pub mod verify;

pub use config::Tolerances;
pub use density::{DensityClaimModel, Density};
pub use error::{Error, Result};
pub use market::{expected_utility, load_market, Endowment, FiniteMarket};
pub use utility::UtilityFn;

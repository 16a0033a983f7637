//! Stackelberg equilibria of a sponsored-data market: users choose demand
//! under network effects and congestion, a content provider sponsors part of
//! each user's traffic and a service provider sets the price.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common case.

// Checks are written as `!(x > 0)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod competitive;
pub mod cooperative;
pub mod demand;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod validate;

#[cfg(test)]
mod test_support;

pub use error::{MarketError, Result};
pub use scalar::Scalar;

pub type Instance = model::MarketInstance<f64>;
pub type Matrices = model::EquilibriumMatrices<f64>;
pub type Strategy = demand::Strategy<f64>;
pub type Demand = demand::DemandProfile<f64>;
pub type CompetitiveOutcome = competitive::CompetitiveResult<f64>;
pub type CooperativeOutcome = cooperative::CooperativeResult<f64>;

pub type InstanceF32 = model::MarketInstance<f32>;
pub type MatricesF32 = model::EquilibriumMatrices<f32>;
pub type StrategyF32 = demand::Strategy<f32>;

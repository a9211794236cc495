//! Bilevel domain randomization: an outer optimizer (CEM or score-function
//! gradients) searches over the parameters of a Gaussian distribution of
//! simulator dynamics, scoring each candidate by training a PPO policy under
//! it and evaluating that policy on a held-out "real" parameterization.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! name the common instantiations.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod envsim;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod outeropt;
pub mod policy;
pub mod ppo;
pub mod randdist;
pub mod scalar;
pub mod seeding;

pub use error::{Error, Result};
pub use scalar::Real;

pub type EnvSpec32 = envsim::EnvSpec<f32>;
pub type EnvSpec64 = envsim::EnvSpec<f64>;
pub type MdpParams32 = envsim::MdpParams<f32>;
pub type MdpParams64 = envsim::MdpParams<f64>;
pub type Phi32 = randdist::Phi<f32>;
pub type Phi64 = randdist::Phi<f64>;
pub type Policy32 = policy::PolicyParams<f32>;
pub type Policy64 = policy::PolicyParams<f64>;

//! Deterministic discrete-event simulator of a GPU-aware inference cluster,
//! plus a PPO autoscaling agent trained against it and the threshold and
//! fixed-replica baselines it is compared with.
//!
//! The numeric core of the agent is generic over [`Scalar`]; the aliases at
//! the crate root pick `f32` for training and checkpoints and `f64` where
//! finite-difference checks need the headroom.

pub mod agent;
pub mod baselines;
pub mod config;
pub mod env;
pub mod error;
pub mod metrics;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod traffic;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Actor-critic weights in the precision used for training and checkpoints.
pub type Policy = agent::ActorCritic<f32>;
/// Double-precision actor-critic, used by gradient checks.
pub type Policy64 = agent::ActorCritic<f64>;
/// Adam state matching [`Policy`].
pub type Optimizer = agent::Adam<f32>;
/// Gradient buffers matching [`Policy`].
pub type PolicyGrads = agent::ActorCriticGrads<f32>;

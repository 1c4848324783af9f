//! Multi-scale predictive representations for offline goal-conditioned RL.
//!
//! A representation learner with five predictive heads over a shared latent
//! space, a decoupled latent actor-critic, deterministic toy environments,
//! offline dataset tooling and an evaluation/diagnostics harness.

pub mod agent;
pub mod cli;
pub mod datagen;
pub mod evalkit;
pub mod error;
pub mod gcenv;
pub mod sampler;
pub mod ndmath;
pub mod repr;

pub use error::{Error, Result};

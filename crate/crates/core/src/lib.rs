//! Simulation lab for stealthy actuator false-data-injection attacks on a
//! kinematic vehicle guarded by an EKF and a chi-square residue detector.
//!
//! The attacker is trained with from-scratch PPO or SAC in [`rl`] against the
//! decision process defined in [`environment`].

pub mod control;
pub mod detection;
pub mod dynamics;
pub mod environment;
pub mod error;
pub mod estimation;
pub mod metrics;
pub mod rl;

pub use error::{Error, Result};

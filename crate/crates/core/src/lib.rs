//! Tuning PID controllers with back-calculation anti-windup by deterministic
//! policy gradient.
//!
//! The controller is treated as a shallow network whose weights are the gains
//! `[kp, ki, kd, rho]` followed by a saturating activation; a ReLU MLP learns
//! the state-action value function and its action gradient drives gradient
//! ascent on the gains.
//!
//! Modules, bottom-up:
//!
//! - [`plant`]: exact zero-order-hold simulation of first-order cascades with dead time.
//! - [`env`]: feature recursion, rewards, set-point schedules and episode termination.
//! - [`actor`]: the PID forward pass, its parameter gradient and SIMC initialization.
//! - [`critic`]: MLP Q-function, backpropagation, optimizers and soft updates.
//! - [`rl`]: replay memory and the training loop (update cadences V1, V1.5, V2).
//! - [`analysis`]: stability boundary, eigenvalue stability check and step metrics.
//! - [`config`]: experiment configuration files.
//! - [`artifacts`]: CSV logs and parameter/critic files.

pub mod actor;
pub mod analysis;
pub mod artifacts;
pub mod config;
pub mod critic;
pub mod env;
mod error;
pub mod plant;
pub mod rl;

pub use error::{Error, Result};

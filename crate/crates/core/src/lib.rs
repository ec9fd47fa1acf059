//! Link-level simulation of a massive-MIMO downlink in which the base station
//! serves two user populations at once: users with pilot-estimated
//! (imperfect) instantaneous CSI and users known only through their channel
//! covariance. The crate synthesizes correlated channels from finite-scatterer
//! geometry, performs MMSE channel estimation, builds statistical and
//! null-space-projected precoders alongside classic ZF/MRT baselines, and
//! evaluates ergodic rates both by Monte Carlo simulation and by closed-form
//! approximations.

pub mod channel;
pub mod error;
pub mod matrix_core;
pub mod precoding;
pub mod rates;
pub mod scenario;

pub use error::{Error, Result};

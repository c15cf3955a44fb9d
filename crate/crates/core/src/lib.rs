//! Simulation and verification toolkit for tracking differentiators (TDs)
//! whose input signal is corrupted by additive colored noise and whose
//! internal dynamics are disturbed by colored and white noise.
//!
//! The crate is organized around five building blocks:
//!
//! * [`noise`] — reproducible Brownian increments and Ornstein-Uhlenbeck
//!   (colored) noise paths, with their exact second moments.
//! * [`design`] — TD design functions, Lyapunov certificates, the linear-case
//!   automatic certificate construction, and the admissible tuning range.
//! * [`simulate`] — Euler-Maruyama integration of the coupled TD + noise
//!   system, and of the time-scaled error system used for cross-validation.
//! * [`analysis`] — Monte Carlo mean-square error estimation, closed-form
//!   bound calculators, and generalized-derivative functionals against
//!   smooth bump test functions.
//! * [`cli`] — the `std` command-line front end (`simulate`, `ensemble`,
//!   `check`, `gendiff`) driven by JSON experiment configs.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod design;
pub mod error;
pub mod noise;
pub mod simulate;

pub use error::{Error, Result};

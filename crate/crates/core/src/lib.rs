//! Magnetic capsule actuation: dipole physics, reciprocating actuator
//! planning, intestinal-twist risk analysis, magnetometer-array localization
//! and a closed-loop propulsion simulator.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actuation;
pub mod commands;
pub mod config;
pub mod error;
pub mod magnetics;
pub mod risk;
pub mod sensing;
pub mod sim;

pub use error::{Error, Result};

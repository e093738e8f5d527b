//! Personalized share of engagement (PSE) estimation from a single site's
//! event log.
//!
//! The crate fits a hierarchical Bayes model of inter-engagement times and
//! site switching, either by Metropolis-Hastings-within-Gibbs or by
//! stochastic gradient Langevin dynamics, and ships a simulated-truth
//! validation harness around it.

pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod rng;
pub mod samplers;
pub mod sim;

pub use error::{Error, ErrorCategory, Result};

//! Resource allocation for device-to-device links underlaying a cellular
//! uplink: channel simulation, an exhaustive-search oracle, centralized and
//! distributed neural allocators, training and evaluation.

pub mod baselines;
pub mod channel;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod io;
pub mod models;
pub mod nn;
pub mod objective;
pub mod oracle;
pub mod rng;
pub mod runconfig;
pub mod stats;
pub mod training;

pub use config::{Objective, SystemConfig};
pub use error::{Error, Result};

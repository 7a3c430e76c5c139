//! Simulation of multi-channel electro-optic sampling: count statistics,
//! post-measurement states, Bayesian reconstruction and a truncated-Fock oracle.

pub mod eos_core;
pub mod error;
pub mod fock_oracle;
pub mod phase_space;
pub mod post_measurement;
pub mod quad;
pub mod reconstruction;
pub mod skellam;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

//! Synthetic monitoring environments.
//!
//! Procedurally generated continuous-control tasks with a measure-preserving
//! transition kernel and an optimal policy known in closed form, so regret is
//! exact at every step. Everything is derived from a single master seed.
//!
//! ```
//! use sme_core::{config::EnvConfig, env::Environment};
//!
//! let mut env = Environment::new(EnvConfig::default()).unwrap();
//! let obs = env.reset(None);
//! let a_star = env.policy().act(&obs[..8]).unwrap();
//! let step = env.step(&a_star).unwrap();
//! assert_eq!(step.reward, 1.0);
//! ```

pub mod agents;
pub mod codec;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod fileio;
pub mod kernel;
pub mod linalg;
pub mod offline;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod stats;
pub mod verify;

pub use config::EnvConfig;
pub use env::Environment;
pub use error::{Error, Result};

/// Crate version, recorded in run logs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

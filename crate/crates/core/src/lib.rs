//! Randomly biased walks on supercritical Galton-Watson trees.
//!
//! The crate is organized around the objects of the model:
//!
//! * [`env`]: laws of the bias weights, the marked tree, `kappa`, the
//!   many-to-one walk and explorers for the minima of the potential;
//! * [`walk`]: the walk itself, its local times, favorite sites and the
//!   optional line, plus an exact branching sampler for excursions;
//! * [`oracle`]: closed-form hitting probabilities and local-time laws on
//!   a single ray, with brute-force counterparts;
//! * [`spine`]: the Markov chain of edge local times along the spine, its
//!   kernel, invariant law and two independent samplers;
//! * [`stats`]: tail fits, two-sample tests and the `f(eps)` functional.

pub mod env;
pub mod error;
pub mod oracle;
pub mod rng;
pub mod spine;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

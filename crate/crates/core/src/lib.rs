//! Hamiltonian velocity predictors, score matching, and generative flows
//! at desk scale.
//!
//! The crate trains velocity predictors for parameterized Hamiltonian ODEs
//! over analytic Gaussian-mixture data, estimates the associated score
//! discrepancy by min-max optimization, and samples by integrating the
//! velocity-predictor ODE backward. Because the data distributions have
//! closed-form densities, scores, and conditionals, every claim is checked
//! against an analytic or brute-force oracle in the test suites.

pub mod checkpoint;
pub mod dynamics;
pub mod error;
pub mod gmm;
pub mod hgf;
pub mod hsm;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
pub use gmm::{GaussianMixture, MixtureSpec};
pub use rng::Rng;

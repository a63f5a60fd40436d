//! Exit-time functionals of ODE flows on bounded domains.

pub mod data;
pub mod domain;
pub mod error;
pub mod exit;
pub mod field;
pub mod flow;
pub mod functionals;
pub mod grid;
pub mod pde;
pub mod rng;
pub mod scenario;
pub mod scalar;
pub mod stochastic;
pub mod variational;

pub use error::{Error, Result};
pub use scalar::Scalar;

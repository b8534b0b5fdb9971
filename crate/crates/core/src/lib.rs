//! Truncated q-deformed Fock spaces, Wick products, partition expansions
//! and q-Levy stochastic calculus, computed exactly over Q[q].

pub mod error;
pub mod fock;
pub mod kspoly;
pub mod model;
pub mod partitions;
pub mod qscalar;
pub mod stochastic;
pub mod wick;
pub mod cli;

pub use error::{Error, Result};
pub use qscalar::{Mode, QPoly, QScalar};

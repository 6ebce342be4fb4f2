//! Discrete Gaussian free field, random-walk local time and their isomorphisms
//! on planar lattice domains.

pub mod error;
pub mod dgff;
pub mod export;
pub mod green;
pub mod isomorphism;
pub mod lattice;
pub mod measures;
pub mod potential;
pub mod quadrature;
pub mod rng;
pub mod sparse;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};

//! Structural invariants and ellipticity certificates for symmetric concave
//! operators on symmetric convex cones.

pub mod certify;
pub mod cli;
pub mod cones;
pub mod error;
pub mod levelset;
pub mod numeric;
pub mod rng;
pub mod symfun;
pub mod transform;

pub use error::{Error, Result};

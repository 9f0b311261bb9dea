//! Functional-inequality constants and hitting-time moments for one-dimensional Gibbs
//! measures and finite reversible Markov chains.

pub mod bounds;
pub mod chain;
pub mod error;
pub mod hitting1d;
pub mod measure1d;
pub mod montecarlo;
pub mod numeric;
pub mod operator1d;

pub use error::{Error, Result};
pub use measure1d::{Family, Measure1D, PotentialSpec};

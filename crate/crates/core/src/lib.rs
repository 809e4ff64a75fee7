//! Greedy design of constant control pulses for identifying the distribution
//! of a control-field inhomogeneity across a spin ensemble, and the simplex
//! constrained least-squares reconstruction that uses them.

pub mod bloch;
pub mod distributions;
pub mod error;
pub mod experiment;
pub mod gram;
pub mod greedy;
pub mod io;
pub mod ogra;
pub mod reconstruction;
pub mod search;
pub mod validate;

pub use error::{Error, Result};

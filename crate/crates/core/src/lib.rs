//! Spacetime classical shadows of multi-qubit process tensors.

pub mod analysis;
pub mod clifford;
pub mod config;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod model;
pub mod pauli;
pub mod process;
pub mod report;
pub mod shadow;
pub mod shotfile;
pub mod tensor;

pub use error::{Error, Result};

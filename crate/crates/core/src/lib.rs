//! Separability-preserving autoencoder ("separator") for three-qubit density
//! matrices, together with the state generators, correlation oracles,
//! training loop and threshold evaluation built around it.

pub mod error;
pub mod evaluation;
pub mod io;
pub mod linalg;
pub mod oracles;
pub mod separator;
pub mod states;
pub mod training;

pub use error::{Error, Result};

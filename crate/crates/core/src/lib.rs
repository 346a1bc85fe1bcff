pub mod config;
pub mod correlations;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod hamiltonian;
pub mod lattice;
pub mod linalg;
pub mod states;

pub use error::{Error, Result};

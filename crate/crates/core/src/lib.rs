pub mod cli_io;
pub mod error;
pub mod flow_fields;
pub mod galerkin_solver;
pub mod harmonic_basis;
pub mod nonlinear;
pub mod rds_experiments;
pub mod sphere_operators;
pub mod stochastic_forcing;

pub use error::{Result, SnsError};

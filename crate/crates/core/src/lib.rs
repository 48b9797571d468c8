pub mod adjoint;
pub mod cli;
pub mod config;
pub mod descent;
pub mod error;
pub mod feedback;
pub mod fitted;
pub mod linalg;
pub mod paths;
pub mod problem;
pub mod regression;
pub mod riccati;
pub mod value;
pub mod variational;

pub use error::{LcfError, Result};

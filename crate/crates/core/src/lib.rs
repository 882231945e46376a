pub mod cluster;
pub mod coeffs;
pub mod dataset;
pub mod embed;
pub mod eval;
pub mod error;
pub mod kernels;
pub mod kkm;
pub mod linalg;
pub mod mr;
pub mod persist;
pub mod synthetic;

pub use error::{Error, Result};

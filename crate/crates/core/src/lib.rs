pub mod admissibility;
pub mod boundary;
pub mod cli;
pub mod error;
pub mod fractional;
pub mod heat;
pub mod linalg;
pub mod maxreg;
pub mod mild;
pub mod quadrature;
pub mod report;
pub mod semigroup;
pub mod volterra;

pub use error::{LabError, Result};

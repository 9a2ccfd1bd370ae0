pub mod algebra;
pub mod error;
pub mod field;
pub mod functional;
pub mod inequalities;
pub mod instanton;
pub mod lattice;
pub mod lorentz;
pub mod neck;
pub mod quadrature;
pub mod spectral;

pub use error::{Error, Result};

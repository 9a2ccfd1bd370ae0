//! Pointwise Lie-algebra and exterior-algebra kernel.

pub mod forms;
pub mod lie;

pub use forms::{
    curvature_endo, wedge, wedge_bracket, wedge_matrix, wedge_real, wedge_scalar, CurvatureEndo,
    GForm, MatrixForm, Pairing, WedgeValue,
};
pub use lie::{quaternion_matrix, su2_standard_generators, Algebra, CMatrix, Complex64, LieElement};

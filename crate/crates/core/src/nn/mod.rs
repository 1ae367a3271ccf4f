//! Minimal CPU tensor engine backing the landmark detector.

pub mod adam;
pub mod layers;
pub mod real;
pub mod tensor;

pub use adam::Adam;
pub use layers::{BatchNorm2d, Conv2d, ConvTranspose2x2, Param};
pub use real::{gemm, Op, Real};
pub use tensor::Tensor;

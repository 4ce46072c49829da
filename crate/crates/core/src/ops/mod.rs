//! Forward and backward kernels on raw slices.
//!
//! The tape in [`crate::tape`] records which kernel produced each value and
//! calls the matching backward kernel during reverse accumulation.

pub mod activation;
pub mod attention;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod resize;
pub mod softmax;

pub use conv::ConvGeom;
pub use norm::{BnConfig, BnMode};

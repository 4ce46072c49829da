//! Dual-polarization SAR ship classification.
//!
//! The crate bundles a small CPU tensor engine with reverse-mode
//! differentiation ([`tensor`], [`tape`], [`ops`], [`params`]), ingestion of
//! co-registered VV/VH complex chips ([`sardata`]), the three-branch
//! cross-attention encoder and dilated residual dense fusion network
//! ([`model`]), and the training / evaluation / ablation harness
//! ([`harness`]).

pub mod error;
pub mod harness;
pub mod model;
pub mod ops;
pub mod par;
pub mod params;
pub mod real;
pub mod sardata;
pub mod seed;
pub mod tape;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use params::{AdamConfig, ParamStore};
pub use real::Real;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

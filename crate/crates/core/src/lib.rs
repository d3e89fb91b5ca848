//! Amend Representation Module (ARM) and the tooling around it.
//!
//! The ARM head replaces global average pooling at the tail of a CNN:
//! feature arrangement (sub-pixel shuffle) → de-albino convolution (no padding,
//! large kernel, large stride, one shared single-channel kernel) → batch norm →
//! channel mean → sharing affinity (EMA-centred residual) → fully connected.

pub mod arm;
pub mod arrangement;
pub mod data;
pub mod error;
pub mod erosion;
pub mod experiments;
pub mod gradcheck;
pub mod init;
pub mod model;
pub mod ops;
pub mod tenfile;
pub mod tensor;
pub mod trainer;

pub use error::{ArmError, Result};
pub use tensor::Tensor;

//! Spiking neural network engine for wafer map defect pattern classification.
//!
//! The crate implements the full pipeline: a small dense-tensor core with
//! exact reverse-mode counterparts, leaky integrate-and-fire dynamics with a
//! surrogate gradient, the convolutional spike encoder / spiking conv /
//! spiking FC / temporal decoder layer stack, backpropagation through the
//! unrolled time steps, wafer-map data handling (codec, resize, D4
//! augmentation, splits, synthetic generation), classification metrics, and
//! a FLOPs/SOPs inference energy model.

pub mod checkpoint;
pub mod data;
pub mod energy;
pub mod error;
pub mod layers;
pub mod lif;
pub mod metrics;
pub mod tensor;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use tensor::Tensor;

//! A small CPU toolkit for convolutional encoder-decoders:
//! tensors, layers with explicit backward passes, Adam, and checkpoint
//! persistence. Generic over `f32`/`f64` so gradients can be checked in
//! double precision against finite differences.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod real;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{ArchitectureDescriptor, Checkpoint, CheckpointError, NamedTensor};
pub use layers::{Conv2d, ConvTranspose2, Linear, Param};
pub use real::Real;
pub use tensor::Tensor;

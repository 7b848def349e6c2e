//! A small neural-network engine for set-structured inputs.
//!
//! Inputs are matrices of `n` per-user rows flattened in user order. Besides
//! ordinary fully-connected layers the engine provides two weight-sharing
//! layers:
//!
//! * [`LayerKind::Equivariant`]: the weight matrix is an `n x n` grid of
//!   blocks with `U` on the diagonal and `V` everywhere else, the bias is a
//!   sub-vector `P` repeated per block. Permuting input rows permutes output
//!   rows identically.
//! * [`LayerKind::Invariant`]: the weight matrix is a single block `A`
//!   repeated `n` times. Permuting input rows leaves the output unchanged.
//!
//! The shared matrices are never materialized during training; gradients of
//! tied positions are accumulated straight into the free blocks.

mod adam;
mod arch;
mod error;
mod layer;
mod network;
mod scalar;

pub use adam::{Adam, AdamConfig, AdamState};
pub use arch::{actor_specs, critic_specs, Architecture, NetDims, ParamCount};
pub use error::NnError;
pub use layer::{Activation, LayerKind, LayerSpec};
pub use network::{Gradients, Network};
pub use scalar::Scalar;

pub type Result<T, E = NnError> = std::result::Result<T, E>;

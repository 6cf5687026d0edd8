//! Linear-time multimodal sequence modeling at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] / [`format`]: dense row-major tensors and the `MLMT` binary file format.
//! * [`ssm`]: zero-order-hold discretization, the recurrent and convolutional
//!   forms of a time-invariant SSM, and the selective (input-dependent) scan.
//! * [`mamba2`]: a toy Mamba-2 block with full-sequence and single-step evaluation.
//! * [`vision`]: PNM loading, patchify, stub encoders and feature fusion.
//! * [`connector`]: 2D scan orders, the Mamba-2 scan connector, SwiGLU and the MLP projector.
//! * [`lm`]: byte tokenizer, toy Mamba-2 language model and greedy generation.
//! * [`bench`]: attention baseline, latency measurement and scaling fits.
//! * [`testkit`] / [`verify`]: independent oracles and the invariant suites built on them.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod bundle;
pub mod connector;
pub mod error;
pub mod format;
pub mod lm;
pub mod mamba2;
pub mod rng;
pub mod ssm;
pub mod tensor;
pub mod testkit;
pub mod verify;
pub mod vision;

pub use error::{Error, Result};
pub use tensor::{DType, Element, Tensor};

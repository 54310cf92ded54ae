//! Differentiable spatio-temporal cubic cropping for video contrastive learning.
//!
//! A crop is described by six parameters (spatial scale, temporal scale,
//! rotation, and three center offsets). A small MLP maps a noise vector to
//! those parameters, a 3D affine grid plus trilinear sampler extracts the
//! crop, and the whole chain is differentiable so the cropper can be trained
//! adversarially against an NT-Xent contrastive loss through gradient
//! reversal. Every gradient in the crate is hand-derived and checked against
//! central finite differences (see [`gradcheck`]).
//!
//! Module map:
//! - [`tensor`]: dense row-major `f64` arrays and the `PCT1` raw file format
//! - [`affine`]: parameter clamping, early-stop masking, affine grids
//! - [`sampler`]: trilinear grid sampling and its coordinate gradient
//! - [`paramgen`]: the noise-to-parameters MLP, gradient reversal, SGD
//! - [`contrastive`]: cosine similarities, NT-Xent and a toy 3D-conv encoder
//! - [`simulator`]: synthetic videos, baseline strategies, the training loop
//! - [`cli`]: command implementations behind the `paramcrop` binary

pub mod affine;
pub mod cli;
pub mod contrastive;
pub mod error;
pub mod gradcheck;
pub mod paramgen;
pub mod sampler;
pub mod simulator;
pub mod tensor;

pub use error::{Error, Result};

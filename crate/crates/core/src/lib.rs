//! Top-K scaled logit distillation.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: dense matrices, stable softmax, top-k selection, seeded RNG.
//! - [`scaling`]: rank-weighted amplification of the teacher's top-k logits.
//! - [`losses`]: contrastive, decoupled top-k cosine, combined, KL and CE
//!   objectives with analytic gradients.
//! - [`model`]: ReLU MLP teacher/student with backprop and SGD.
//! - [`data`]: hierarchical synthetic data, CSV I/O and batching.
//! - `harness` (feature `harness`): training, distillation, ablation sweeps
//!   and logit analyses behind the `topkd` CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod scaling;

#[cfg(feature = "harness")]
pub mod harness;

pub use error::{Error, Result};

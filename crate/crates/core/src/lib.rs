//! Knowledge-distillation experiments for low-complexity acoustic scene
//! classification: a small autodiff engine, a log-mel frontend,
//! device-generalization augmentations, CP-style CNNs with complexity
//! accounting, the distillation loss with teacher logit stores, and a
//! training/evaluation harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod augment;
pub mod data;
pub mod distill;
pub mod error;
pub mod harness;
pub mod models;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};

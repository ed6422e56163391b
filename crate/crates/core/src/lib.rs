//! Core of the Time-EAPCR anomaly detector.
//!
//! Everything in this crate is pure computation over in-memory data: a small
//! reverse-mode autograd engine, the neural blocks built on it, the two-branch
//! model, leak-free preprocessing transforms, the training loop and the
//! evaluation metrics. File formats and the command line live in the
//! `eapcr-cli` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod autograd;
pub mod data;
mod error;
pub mod eval;
pub(crate) mod math;
pub mod model;
pub mod nn;
pub mod synth;
pub mod train;

pub use autograd::{grad_check, Graph, Tensor, Var};
pub use error::{Error, Result};
pub use model::{ModelConfig, ModelParams, PermutationPlan, Variant};


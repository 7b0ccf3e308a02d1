//! Dual-model weight selection and self-knowledge distillation for small
//! vision models.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense f32 tensors, a reverse-mode tape and a finite-difference
//!   gradient oracle.
//! - [`models`]: isotropic (ViT-like) and hierarchical (ConvNeXt-like) toy
//!   architectures, their canonical parameter tables and initializers.
//! - [`surgery`]: the NTA1 checkpoint format and teacher-to-student weight
//!   selection (layer selection, component mapping, element selection).
//! - [`distill`]: losses, SGD and EMA updates and the training loop for every
//!   run mode.
//! - [`data`]: synthetic datasets, PGM ingestion, stratified split and subsampling.
//! - [`harness`]: experiment orchestration, metrics, sweeps and cost reporting
//!   behind the `forge` CLI.

pub mod data;
pub mod distill;
pub mod error;
pub mod harness;
pub mod models;
pub mod rng;
pub mod surgery;
pub mod tensor;

pub use error::{Error, Result};

//! Synergic adversarial label learning on synthetic graded-disease images.
//!
//! The pipeline has three stages: per-task pre-training of small
//! convolutional graders, cross-generation of temperature-scaled soft labels
//! between tasks, and joint training of a hard-shared multi-task network on
//! the mixed hard/soft supervision. Calibration metrics, Grad-CAM heatmaps,
//! and a config-driven experiment harness sit on top.
//!
//! Crate layout:
//! - [`tensor`]: dense f64 tensors with tape-based reverse-mode autodiff
//! - [`network`]: trunk + per-task-head architecture, Adam, checkpoints
//! - [`data`]: procedural graded-lesion image generator, augmentation, splits
//! - [`pipeline`]: pre-training, soft-label generation, multi-task training
//! - [`calibration`]: confidence/error, reliability diagrams, ECE
//! - [`gradcam`]: gradient-weighted class activation maps
//! - [`experiment`]: ablation/sweep runners and result tables

use mimalloc::MiMalloc;

/// Training churns through large short-lived activation buffers; the default
/// allocator returns them to the OS each step, which dominates runtime with
/// page faults. A pooling allocator keeps them hot.
#[global_allocator]
static GLOBAL: MiMalloc = MiMalloc;

pub mod calibration;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcam;
pub mod network;
pub mod pipeline;
pub mod seeding;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Gradients, Tape, Tensor, Var};

//! gazebench: a desk-scale workbench for neck-mounted gaze estimation.
//!
//! The pipeline mirrors a paired head-camera / neck-camera recording rig:
//! a deterministic synthetic world generates paired frame streams with
//! ground-truth 3D gaze targets, an annotation stage synchronizes the
//! streams and labels gaze events, a small convolutional heatmap model is
//! trained in one of three variants (plain heatmap regression, auxiliary
//! in-view classification, multi-view co-learning with rotation-conditioned
//! latent alignment), and an evaluation stage scores predictions with an
//! adaptive-F1 protocol.
//!
//! Modules follow the data flow:
//!
//! - [`geometry`] — exact pinhole projection and cross-view gaze mapping
//! - [`synthworld`] — synthetic paired-session generator and session files
//! - [`annotation`] — synchronization, event labeling, heatmap targets,
//!   clip segmentation and crop augmentation
//! - [`model`] — encoder–bottleneck–decoder network with analytic gradients
//! - [`training`] — AdamW loops for the `base`, `aux` and `colearn` variants
//! - [`eval`] — adaptive F1, confusion matrices and dataset statistics
//! - [`cli`] — the `gazebench` binary: generate | annotate | train | eval | stats
//!
//! See the crate `examples/` directory for one runnable example per stage.

pub mod annotation;
pub mod cli;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gzt;
pub mod model;
pub mod synthworld;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

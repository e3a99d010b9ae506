//! Mechanistic-interpretability workbench for a miniature vision transformer.
//!
//! The pipeline generates a synthetic shapes dataset ([`dataset`]), trains a
//! CLIP-style ViT on 16-way feature detection ([`vit`]) using a small
//! reverse-mode autodiff engine ([`tensor`]), then analyses it: Grad-CAM
//! attribution ([`gradcam`]), entropy-ranked feature neurons ([`neurons`])
//! and the superposition-vs-separability sweep ([`superpos`]). The
//! [`pipeline`] module wires the stages to an on-disk workspace.

pub mod dataset;
pub mod error;
pub mod gradcam;
pub mod image;
pub mod neurons;
pub mod pipeline;
pub mod stats;
pub mod superpos;
pub mod tensor;
pub mod vit;

pub use error::{Error, Result};

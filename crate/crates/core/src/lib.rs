//! Group-mask explanations for sentence-pair classifiers.
//!
//! A small reverse-mode autodiff engine ([`tensor`]) drives two miniature pair
//! classifiers ([`models`]), a planted-rationale task generator ([`datagen`]),
//! mask-based explainers ([`explainers`]), faithfulness metrics ([`metrics`])
//! and heatmap rendering ([`render`]). The `pairmask` binary wires them together.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod explainers;
pub mod metrics;
pub mod models;
pub mod render;
pub mod tensor;

pub use error::{Error, Result};

//! Style-space attribute variation toolkit.
//!
//! Everything needed to study attribute-level evasion of fake-image
//! detectors at desk scale: a toy style-based generator with explicit
//! gradients, latent inversion regularized by a Gaussian prior over the
//! pre-activation latent space, style-channel attribute discovery, and
//! two attack drivers (masked-gradient white-box search and a genetic
//! black-box search) plus the training, metrics, and defense harness
//! around them.
//!
//! The crate is organized around two pluggable contracts:
//! [`generator::Generator`] (style-based image synthesis) and
//! [`detect::Detector`] (fake/real scoring). The toy implementations are
//! small hand-rolled networks in [`nn`] so that every gradient the
//! attacks rely on is exact and testable against finite differences.
//!
//! Batch work (stats estimation, per-image attack campaigns) runs on
//! rayon when the default `parallel` feature is enabled and falls back
//! to a sequential loop otherwise; results are identical either way.

pub mod attack;
pub mod attributes;
pub mod campaign;
pub mod checkpoint;
pub mod defense;
pub mod detect;
pub mod error;
pub mod generator;
pub mod inversion;
pub mod latent;
mod linalg;
pub mod nn;
pub mod parallel;
pub mod plot;
pub mod report;
pub mod semantic;
pub mod toyface;

pub use error::{Error, Result};

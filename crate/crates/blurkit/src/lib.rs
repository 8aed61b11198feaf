//! Motion-blur formation, exposure-interval-conditioned video diffusion,
//! and a bidirectional evaluation suite, at desk scale.
//!
//! The pipeline runs on a procedurally generated video corpus with
//! analytic motion ground truth: `dataset` renders moving-shape scenes and
//! samples blur tasks, `blur` implements the physical blur formation
//! model, `encoding` builds the exposure-interval conditioning signals,
//! `diffusion` trains and samples a small conditional video diffusion
//! transformer, and `metrics` scores outputs with bidirectional
//! patch metrics, end-point error, and blur consistency.

pub mod blur;
pub mod cli;
pub mod dataset;
pub mod diffusion;
pub mod encoding;
pub mod error;
pub mod img;
pub mod metrics;

pub use error::{Error, Result};

//! Desk-scale histology image analysis: tiling and patch extraction, H&E
//! colour deconvolution, nuclei detection post-processing and evaluation,
//! five-class cell phenotyping with a small gradient-checked CNN, ensemble
//! inference, t-SNE embedding analysis, and a synthetic tile generator with
//! exact ground truth.

pub mod embed;
pub mod error;
pub mod imgcore;
pub mod pipeline;
pub mod rng;
pub mod classify;
pub mod detect;
pub mod stain;
pub mod synthgen;

pub use error::{CoreError, Result};

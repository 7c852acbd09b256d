//! Text-conditioned latent diffusion over UV-structured Gaussian avatars.
//!
//! The crate is organised bottom-up:
//!
//! - [`body`]: parametric template body with blend shapes and skinning.
//! - [`gaussians`]: UV attribute maps, base Gaussians and offset decoding.
//! - [`render`]: CPU tile rasterizer for Gaussian splats with a backward pass.
//! - [`nn`]: small tensor engine with hand-written gradients and Adam.
//! - [`distill`]: frozen PCA teacher encoder and the convolutional decoder.
//! - [`denoiser`]: text embedder and the conditional x0-predicting network.
//! - [`diffusion`]: noise schedule, guided sampling and latent inpainting.
//! - [`data`]: procedural avatars, captions and dataset files.
//! - [`pipeline`], [`cli`]: end-to-end generation and the command line.

pub mod binio;
pub mod body;
pub mod cli;
pub mod error;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod distill;
pub mod gaussians;
pub mod kv;
pub mod latent;
pub mod math;
pub mod nn;
pub mod pipeline;
pub mod render;
pub mod rng;

pub use error::{Error, Result};

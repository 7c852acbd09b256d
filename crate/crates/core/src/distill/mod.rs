//! Latent coding: a frozen per-texel PCA teacher defining the latent
//! space, and the convolutional decoder trained to expand latents back to
//! attribute maps.

mod decoder;
pub mod pyramid;
mod teacher;
#[cfg(test)]
mod tests;

pub use decoder::{
    image_loss, tensor_to_map, Decoder, DecoderTrace, DistillExample, DistillLoss, DistillMode, RenderSetup,
    DECODER_WIDTH, LAMBDA_FEATURE, LAMBDA_IMAGE, LAMBDA_OFFSET,
};
pub use teacher::{
    area_downsample, fit_teacher, symmetric_eigen, Teacher, DEFAULT_LATENT_CHANNELS, DOWNSAMPLE, MIN_TEACHER_MAPS,
};

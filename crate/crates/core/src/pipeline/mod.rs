//! Run configuration, model bundle persistence, training loops and the
//! generate/edit/animate/export operations used by the command line.

mod config;
mod model;
mod ops;
mod ply;
mod poses;
mod train;

pub use config::RunConfig;
pub use model::{
    check_dimensions, decoder_checkpoint, decoder_from_checkpoint, denoiser_checkpoint, denoiser_from_checkpoint,
    AvatarModel, DECODER_FILE, DENOISER_FILE, TEACHER_FILE, TEMPLATE_FILE,
};
pub use ops::{
    read_shirt_color, realize, seam_gradient, swap_region, tint, turntable, ShirtReading, SHIRT_VIEW_RESOLUTION,
};
pub use ply::{export_ply, parse_ply, ply_string, read_ply};
pub use poses::{load_poses, parse_poses, poses_to_text};
pub use train::{
    batch_indices, distill_examples, encode_samples, new_decoder, new_denoiser, train_decoder, train_denoiser,
    train_model, DecoderTraining, DenoiserTraining, Progress,
};

//! Stage-two network: a closed-vocabulary text embedder and the
//! conditional denoiser predicting the clean latent.

mod net;
mod text;

pub use net::{
    region_layout, timestep_features, Denoiser, DenoiserConfig, DenoiserExample, DenoiserModel, DenoiserStep,
    DenoiserTrace, TrainOptions, DEFAULT_DROPOUT, TIME_DIM, TIME_FREQUENCIES,
};
pub use text::{TextEmbedder, EMBED_PARAM, MAX_TOKENS, NULL_TOKEN, TOKEN_DIM, UNKNOWN_TOKEN};

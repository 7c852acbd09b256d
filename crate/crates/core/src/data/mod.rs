//! Procedural avatars: wardrobe specs, ground-truth attribute maps,
//! captions from a small grammar, and on-disk datasets.

mod captions;
mod dataset;
pub mod palette;
mod spec;
#[cfg(test)]
mod tests;

pub use captions::{
    gen_captions, parse_caption, tokenize, vocabulary, word_count, CaptionAttributes, CaptionSet,
    LONG_CAPTION_MAX_WORDS, NUM_SHORT_CAPTIONS, SHORT_CAPTION_MAX_WORDS, SHORT_CAPTION_MIN_WORDS,
};
pub use dataset::{
    build_dataset, gen_sample, gen_samples, load_dataset, pose_bases, render_views, training_views,
    view_camera, DatasetManifest, ManifestEntry, Sample, MANIFEST_FILE, VIEW_RESOLUTION, VIEW_YAWS,
};
pub use spec::{
    garment_color, gen_spec, is_shirt_band, pose_params, spec_to_attribute_map, texel_bands, AvatarSpec,
    Sleeve, ATTRIBUTE_RESOLUTION, BODY_SCALE_RANGE, MAP_NOISE, OPACITY_LOGIT, POSE_NAMES,
};

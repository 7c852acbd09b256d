//! UV-structured Gaussians: attribute maps, base Gaussians anchored on the
//! posed surface, and decoding of per-texel offsets into primitives.

mod attribute_map;
mod base;
mod offsets;

pub use attribute_map::{channel, decode_float_map, encode_float_map, AttributeMap, NUM_CHANNELS};
pub use base::{build_base_gaussians, knn_mean_distance, region_mask, BaseGaussians, RegionMask};
pub use offsets::{
    apply_offsets, apply_offsets_backward, POSITION_OFFSET_MAX, ROTATION_GAIN, SCALE_LOG_CLAMP,
};

use crate::math::{Quat, Vec3};

/// One renderable primitive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mean: Vec3,
    pub rotation: Quat,
    pub scale: Vec3,
    pub color: Vec3,
    pub opacity: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianSet {
    pub gaussians: Vec<Gaussian>,
}

impl GaussianSet {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Checks `α ∈ [0,1]`, `c ∈ [0,1]³`, `s > 0` and `|r| = 1 ± 1e-6`.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (i, g) in self.gaussians.iter().enumerate() {
            if !(0.0..=1.0).contains(&g.opacity) {
                return Err(format!("gaussian {i}: opacity {} out of range", g.opacity));
            }
            if g.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(format!("gaussian {i}: color {:?} out of range", g.color));
            }
            if g.scale.iter().any(|&s| !(s > 0.0)) {
                return Err(format!("gaussian {i}: scale {:?} not positive", g.scale));
            }
            if (g.rotation.norm() - 1.0).abs() > 1e-6 {
                return Err(format!("gaussian {i}: rotation not unit"));
            }
            if g.mean.iter().any(|m| !m.is_finite()) {
                return Err(format!("gaussian {i}: non-finite mean"));
            }
        }
        Ok(())
    }
}

/// Gradient of a scalar loss with respect to one primitive's attributes.
/// `rotation` is taken with respect to the raw `(w, x, y, z)` components.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GaussianGrad {
    pub mean: Vec3,
    pub rotation: [f64; 4],
    pub scale: Vec3,
    pub color: Vec3,
    pub opacity: f64,
}

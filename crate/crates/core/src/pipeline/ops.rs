use crate::body::{lbs_deform, BodyParams, BodyTemplate, Region};
use crate::data::palette::{nearest_name, SHIRT_COLORS};
use crate::data::{is_shirt_band, texel_bands, view_camera};
use crate::error::{Error, Result};
use crate::gaussians::{
    apply_offsets, build_base_gaussians, channel, knn_mean_distance, region_mask, AttributeMap, GaussianSet, RegionMask,
};
use crate::latent::Latent;
use crate::math::{dist, logit, sigmoid, Vec3};
use crate::render::{render, RenderedImage};

/// Decoded attributes placed on the body posed by `params`.
pub fn realize(template: &BodyTemplate, attrs: &AttributeMap, params: &BodyParams) -> Result<GaussianSet> {
    if attrs.width != attrs.height {
        return Err(Error::invalid("attribute map must be square"));
    }
    let mesh = lbs_deform(template, params)?;
    let base = build_base_gaussians(&mesh, template, attrs.width)?;
    apply_offsets(&base, attrs)
}

/// `frames` orthographic views evenly spaced around the vertical axis,
/// starting from the front.
pub fn turntable(set: &GaussianSet, frames: usize, resolution: usize) -> Result<Vec<RenderedImage>> {
    (0..frames)
        .map(|k| {
            let cam = view_camera(360.0 * k as f64 / frames as f64, resolution)?;
            Ok(render(set, &cam)?.0)
        })
        .collect()
}

/// Multiplies the post-sigmoid color of every texel of `region` by `tint`.
pub fn tint(template: &BodyTemplate, attrs: &AttributeMap, region: Region, tint: [f64; 3]) -> Result<AttributeMap> {
    if tint.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::invalid(format!("tint components must lie in [0,1], got {tint:?}")));
    }
    let mask = region_mask(template, region, attrs.width)?;
    let mut out = attrs.clone();
    for row in 0..attrs.height {
        for col in 0..attrs.width {
            if !mask.get(col, row) {
                continue;
            }
            let texel = out.texel_mut(col, row);
            for (k, c) in channel::COLOR.enumerate() {
                let v = (sigmoid(texel[c] as f64) * tint[k]).clamp(1e-4, 1.0 - 1e-4);
                texel[c] = logit(v) as f32;
            }
        }
    }
    Ok(out)
}

/// Copies the texels of `donor` under `mask` into `latent`.
pub fn swap_region(latent: &Latent, donor: &Latent, mask: &RegionMask) -> Result<Latent> {
    if latent.shape() != donor.shape() || mask.resolution != latent.height || latent.height != latent.width {
        return Err(Error::invalid("latents and mask must share one square shape"));
    }
    let mut out = latent.clone();
    let plane = latent.plane();
    for c in 0..latent.channels {
        for p in 0..plane {
            if mask.data[p] != 0 {
                out.data[c * plane + p] = donor.data[c * plane + p];
            }
        }
    }
    Ok(out)
}

/// Shirt color read from a front render of the avatar in rest pose.
#[derive(Debug, Clone, PartialEq)]
pub struct ShirtReading {
    /// Index into the shirt palette.
    pub color: usize,
    pub mean_rgb: [f64; 3],
    pub pixels: usize,
}

pub const SHIRT_VIEW_RESOLUTION: usize = 64;

/// Renders the avatar from the front and averages the pixels covered by
/// front-facing shirt-band torso Gaussians, then names the mean color.
pub fn read_shirt_color(template: &BodyTemplate, attrs: &AttributeMap) -> Result<ShirtReading> {
    let res = attrs.width;
    let mesh = lbs_deform(template, &BodyParams::rest(template))?;
    let base = build_base_gaussians(&mesh, template, res)?;
    let set = apply_offsets(&base, attrs)?;
    let cam = view_camera(0.0, SHIRT_VIEW_RESOLUTION)?;
    let (img, _) = render(&set, &cam)?;
    let bands = texel_bands(template, res)?;
    let mut hit = vec![false; img.width * img.height];
    for k in 0..base.len() {
        let Some((region, row)) = bands[base.texels[k]] else { continue };
        if !is_shirt_band(region, row) || base.normal(k)[2] < 0.5 {
            continue;
        }
        let ([x, y], _) = cam.project_point(cam.to_camera(base.positions[k]));
        if x >= 0.0 && y >= 0.0 && (x as usize) < img.width && (y as usize) < img.height {
            hit[y as usize * img.width + x as usize] = true;
        }
    }
    let mut sum = [0.0; 3];
    let mut pixels = 0;
    for (i, _) in hit.iter().enumerate().filter(|(_, &h)| h) {
        if img.alpha[i] < 0.5 {
            continue;
        }
        for c in 0..3 {
            sum[c] += img.rgb[i * 3 + c];
        }
        pixels += 1;
    }
    if pixels == 0 {
        return Err(Error::State("no shirt pixels visible in the front view".into()));
    }
    let mean_rgb = sum.map(|s| s / pixels as f64);
    Ok(ShirtReading {
        color: nearest_name(&SHIRT_COLORS, mean_rgb),
        mean_rgb,
        pixels,
    })
}

/// Mean RGB distance across the UV seams of `region`, using post-sigmoid
/// colors. A seam pair is a texel of `region` and its nearest texel of
/// another region on the rest-pose surface, when the two lie within twice
/// the region's median texel spacing. These are neighbors on the body that
/// the UV layout pulls apart (neck, shoulders, hips for the torso).
pub fn seam_gradient(template: &BodyTemplate, attrs: &AttributeMap, region: Region) -> Result<f64> {
    if attrs.width != attrs.height {
        return Err(Error::invalid("attribute map must be square"));
    }
    let mesh = lbs_deform(template, &BodyParams::rest(template))?;
    let base = build_base_gaussians(&mesh, template, attrs.width)?;
    let (inside, outside): (Vec<usize>, Vec<usize>) = (0..base.len()).partition(|&k| base.regions[k] == region);
    if inside.is_empty() || outside.is_empty() {
        return Err(Error::invalid(format!("region {} has no seam", region.name())));
    }
    let pts: Vec<Vec3> = inside.iter().map(|&k| base.positions[k]).collect();
    let mut spacing = knn_mean_distance(&pts, 1);
    spacing.sort_by(f64::total_cmp);
    let reach = 2.0 * spacing[spacing.len() / 2];

    let color = |k: usize| -> [f64; 3] {
        let t = base.texels[k];
        let tx = attrs.texel(t % attrs.width, t / attrs.width);
        [0, 1, 2].map(|c| sigmoid(tx[channel::COLOR.start + c] as f64))
    };
    let mut total = 0.0;
    let mut pairs = 0usize;
    for &a in &inside {
        let (b, d) = outside
            .iter()
            .map(|&b| (b, dist(base.positions[a], base.positions[b])))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if d > reach {
            continue;
        }
        let (ca, cb) = (color(a), color(b));
        total += ((ca[0] - cb[0]).powi(2) + (ca[1] - cb[1]).powi(2) + (ca[2] - cb[2]).powi(2)).sqrt();
        pairs += 1;
    }
    if pairs == 0 {
        return Err(Error::invalid(format!("region {} has no seam", region.name())));
    }
    Ok(total / pairs as f64)
}

use super::attribute_map::{channel, AttributeMap, NUM_CHANNELS};
use super::base::BaseGaussians;
use super::{Gaussian, GaussianGrad, GaussianSet};
use crate::error::{Error, Result};
use crate::math::{self, Quat};

/// Bound on the position offset along each tangent-frame axis (meters).
pub const POSITION_OFFSET_MAX: f64 = 0.05;
/// Gain on the three free rotation-offset channels.
pub const ROTATION_GAIN: f64 = 0.5;
/// Log-scale offsets are clamped to `±SCALE_LOG_CLAMP`.
pub const SCALE_LOG_CLAMP: f64 = 4.0;

/// Four bilinear taps: texel indices and weights.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Taps {
    pub index: [usize; 4],
    pub weight: [f64; 4],
}

pub(crate) fn bilinear_taps(width: usize, height: usize, uv: [f64; 2]) -> Result<Taps> {
    if !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1]) {
        return Err(Error::Indexing(format!("uv {uv:?} lies outside the attribute map")));
    }
    let axis = |coord: f64, n: usize| -> (usize, usize, f64) {
        let x = (coord * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = (x.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, x - i0 as f64)
    };
    let (x0, x1, fx) = axis(uv[0], width);
    let (y0, y1, fy) = axis(uv[1], height);
    Ok(Taps {
        index: [y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1],
        weight: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
    })
}

fn sample(attrs: &AttributeMap, taps: &Taps) -> [f64; NUM_CHANNELS] {
    let mut out = [0.0; NUM_CHANNELS];
    for (&t, &w) in taps.index.iter().zip(&taps.weight) {
        if w == 0.0 {
            continue;
        }
        let texel = &attrs.data[t * NUM_CHANNELS..(t + 1) * NUM_CHANNELS];
        for (o, &v) in out.iter_mut().zip(texel) {
            *o += w * v as f64;
        }
    }
    out
}

fn rotation_offset(raw: &[f64]) -> (Quat, f64) {
    let p = Quat::new(
        1.0,
        ROTATION_GAIN * raw[1],
        ROTATION_GAIN * raw[2],
        ROTATION_GAIN * raw[3],
    );
    let n = p.norm();
    (Quat::new(p.w / n, p.x / n, p.y / n, p.z / n), n)
}

fn check_shape(base: &BaseGaussians, attrs: &AttributeMap) -> Result<()> {
    if attrs.width == 0 || attrs.height == 0 {
        return Err(Error::Indexing("attribute map is empty".into()));
    }
    if base.uvs.len() != base.len() {
        return Err(Error::invalid("base Gaussians have inconsistent lengths"));
    }
    Ok(())
}

/// Decodes an attribute map into world-space primitives. Primitive `k`
/// corresponds to base Gaussian `k`; position offsets are expressed in the
/// base Gaussian's tangent frame.
pub fn apply_offsets(base: &BaseGaussians, attrs: &AttributeMap) -> Result<GaussianSet> {
    check_shape(base, attrs)?;
    let mut gaussians = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        let taps = bilinear_taps(attrs.width, attrs.height, base.uvs[k])?;
        let a = sample(attrs, &taps);
        let frame = base.rotations[k].to_mat3();
        let local: [f64; 3] =
            std::array::from_fn(|i| POSITION_OFFSET_MAX * a[channel::POSITION.start + i].tanh());
        let mean = math::add(base.positions[k], math::mat_vec(&frame, local));
        let (dq, _) = rotation_offset(&a[channel::ROTATION]);
        let rotation = base.rotations[k] * dq;
        let scale = std::array::from_fn(|i| {
            let d = a[channel::SCALE.start + i].clamp(-SCALE_LOG_CLAMP, SCALE_LOG_CLAMP);
            base.scales[k][i] * d.exp()
        });
        let color = std::array::from_fn(|i| math::sigmoid(a[channel::COLOR.start + i]));
        gaussians.push(Gaussian {
            mean,
            rotation,
            scale,
            color,
            opacity: math::sigmoid(a[channel::OPACITY]),
        });
    }
    Ok(GaussianSet { gaussians })
}

/// Pulls per-primitive gradients back to the raw attribute map channels.
/// The result has the same dimensions as `attrs`.
pub fn apply_offsets_backward(
    base: &BaseGaussians,
    attrs: &AttributeMap,
    grads: &[GaussianGrad],
) -> Result<AttributeMap> {
    check_shape(base, attrs)?;
    if grads.len() != base.len() {
        return Err(Error::invalid(format!(
            "{} gradients for {} Gaussians",
            grads.len(),
            base.len()
        )));
    }
    let mut acc = vec![0.0f64; attrs.data.len()];
    for (k, g) in grads.iter().enumerate() {
        let taps = bilinear_taps(attrs.width, attrs.height, base.uvs[k])?;
        let a = sample(attrs, &taps);
        let mut d = [0.0f64; NUM_CHANNELS];

        let frame = base.rotations[k].to_mat3();
        let local_grad = math::mat_vec(&math::transpose(&frame), g.mean);
        for i in 0..3 {
            let t = a[channel::POSITION.start + i].tanh();
            d[channel::POSITION.start + i] = POSITION_OFFSET_MAX * (1.0 - t * t) * local_grad[i];
        }

        let (q, n) = rotation_offset(&a[channel::ROTATION]);
        let l = base.rotations[k].left_matrix();
        let gq: [f64; 4] = std::array::from_fn(|j| (0..4).map(|i| l[i][j] * g.rotation[i]).sum());
        let qa = q.to_array();
        let proj = (0..4).map(|i| qa[i] * gq[i]).sum::<f64>();
        for i in 1..4 {
            d[channel::ROTATION.start + i] = ROTATION_GAIN * (gq[i] - qa[i] * proj) / n;
        }

        for i in 0..3 {
            let raw = a[channel::SCALE.start + i];
            if raw.abs() <= SCALE_LOG_CLAMP {
                d[channel::SCALE.start + i] = base.scales[k][i] * raw.exp() * g.scale[i];
            }
        }
        for i in 0..3 {
            let c = math::sigmoid(a[channel::COLOR.start + i]);
            d[channel::COLOR.start + i] = c * (1.0 - c) * g.color[i];
        }
        let o = math::sigmoid(a[channel::OPACITY]);
        d[channel::OPACITY] = o * (1.0 - o) * g.opacity;

        for (&t, &w) in taps.index.iter().zip(&taps.weight) {
            if w == 0.0 {
                continue;
            }
            for (c, &v) in d.iter().enumerate() {
                acc[t * NUM_CHANNELS + c] += w * v;
            }
        }
    }
    AttributeMap::from_data(attrs.width, attrs.height, acc.into_iter().map(|v| v as f32).collect())
}

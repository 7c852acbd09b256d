use std::path::Path;

use crate::binio::read_text;
use crate::body::{BodyParams, BodyTemplate};
use crate::error::{Error, Result};
use crate::math::Quat;

const UNIT_TOLERANCE: f64 = 1e-6;

/// Pose sequence text: one frame per line holding `4 × joints` numbers,
/// the `(w, x, y, z)` rotation of each joint in skeleton order. Blank
/// lines and `#` comments are skipped. Quaternions must be unit length.
pub fn parse_poses(text: &str, template: &BodyTemplate, beta: &[f64]) -> Result<Vec<BodyParams>> {
    let joints = template.num_joints();
    if beta.len() != template.num_shape {
        return Err(Error::invalid(format!(
            "beta has {} coefficients, template expects {}",
            beta.len(),
            template.num_shape
        )));
    }
    let mut frames = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| Error::parse(i + 1, format!("bad number `{v}`"))))
            .collect::<Result<_>>()?;
        if vals.len() != 4 * joints {
            return Err(Error::parse(
                i + 1,
                format!("expected {} numbers ({joints} quaternions), found {}", 4 * joints, vals.len()),
            ));
        }
        let mut theta = Vec::with_capacity(joints);
        for (j, q) in vals.chunks(4).enumerate() {
            let q = Quat::from_array([q[0], q[1], q[2], q[3]]);
            if (q.norm() - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::parse(i + 1, format!("rotation of joint {j} is not unit (|q| = {})", q.norm())));
            }
            theta.push(q);
        }
        let mut params = BodyParams::rest(template);
        params.beta = beta.to_vec();
        params.theta = theta;
        frames.push(params);
    }
    if frames.is_empty() {
        return Err(Error::parse(0, "pose file holds no frames"));
    }
    Ok(frames)
}

pub fn load_poses(path: &Path, template: &BodyTemplate, beta: &[f64]) -> Result<Vec<BodyParams>> {
    parse_poses(&read_text(path)?, template, beta)
}

/// Inverse of [`parse_poses`] (rotations only).
pub fn poses_to_text(frames: &[BodyParams]) -> String {
    frames
        .iter()
        .map(|f| {
            let nums: Vec<String> = f
                .theta
                .iter()
                .flat_map(|q| q.to_array())
                .map(|v| v.to_string())
                .collect();
            nums.join(" ") + "\n"
        })
        .collect()
}

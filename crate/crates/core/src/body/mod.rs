//! Simplified parametric body: canonical template, linear blend shapes,
//! joint regression and linear blend skinning.

mod format;
mod template;
mod uv;

pub use template::{default_template, DEFAULT_TEMPLATE_SEED};
pub use uv::{UvRaster, UV_CHECK_RESOLUTION};

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Quat, Vec3};

/// Tolerance on unit-norm quaternions and skinning weight sums.
pub const UNIT_TOLERANCE: f64 = 1e-6;
/// Maximum number of joints influencing one vertex.
pub const MAX_INFLUENCES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Head,
    Torso,
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
}

impl Region {
    pub const ALL: [Region; 6] = [
        Region::Head,
        Region::Torso,
        Region::LeftArm,
        Region::RightArm,
        Region::LeftLeg,
        Region::RightLeg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Region::Head => "head",
            Region::Torso => "torso",
            Region::LeftArm => "left_arm",
            Region::RightArm => "right_arm",
            Region::LeftLeg => "left_leg",
            Region::RightLeg => "right_leg",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Region> {
        Region::ALL.get(i).copied()
    }

    pub fn parse(name: &str) -> Result<Region> {
        Region::ALL
            .into_iter()
            .find(|r| r.name() == name)
            .ok_or_else(|| Error::invalid(format!("unknown region `{name}`")))
    }
}

/// Axis-aligned rectangle of the UV atlas owned by one region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chart {
    pub region: Region,
    pub u0: f64,
    pub v0: f64,
    pub u1: f64,
    pub v1: f64,
}

impl Chart {
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.u0 && u < self.u1 && v >= self.v0 && v < self.v1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// Parent joint index, `-1` for the root.
    pub parent: i32,
    /// Rest offset from the parent joint (absolute position for the root).
    pub offset: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SkinWeights {
    pub joints: [u32; MAX_INFLUENCES],
    pub weights: [f64; MAX_INFLUENCES],
}

impl SkinWeights {
    pub fn single(joint: u32) -> Self {
        SkinWeights {
            joints: [joint, 0, 0, 0],
            weights: [1.0, 0.0, 0.0, 0.0],
        }
    }

    /// Builds normalized weights from `(joint, weight)` pairs, merging
    /// duplicates and dropping zeros.
    pub fn from_pairs(pairs: &[(u32, f64)]) -> Self {
        let mut merged: Vec<(u32, f64)> = Vec::new();
        for &(j, w) in pairs {
            if w <= 0.0 {
                continue;
            }
            match merged.iter_mut().find(|(mj, _)| *mj == j) {
                Some(entry) => entry.1 += w,
                None => merged.push((j, w)),
            }
        }
        assert!(!merged.is_empty() && merged.len() <= MAX_INFLUENCES);
        let total: f64 = merged.iter().map(|p| p.1).sum();
        let mut out = SkinWeights::default();
        for (k, (j, w)) in merged.into_iter().enumerate() {
            out.joints[k] = j;
            out.weights[k] = w / total;
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.joints
            .iter()
            .zip(self.weights.iter())
            .filter(|(_, &w)| w != 0.0)
            .map(|(&j, &w)| (j as usize, w))
    }

    /// Joint carrying the largest weight (lowest index on ties).
    pub fn dominant(&self) -> usize {
        let mut best = 0;
        for k in 1..MAX_INFLUENCES {
            if self.weights[k] > self.weights[best] {
                best = k;
            }
        }
        self.joints[best] as usize
    }
}

/// Canonical mesh, skeleton, skinning weights, blend-shape bases and UV
/// layout. Bases are stored vertex-major: `basis[(v * K + k) * 3 + axis]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyTemplate {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub uvs: Vec<[f64; 2]>,
    pub joints: Vec<Joint>,
    pub skin: Vec<SkinWeights>,
    pub num_shape: usize,
    pub shape_basis: Vec<f64>,
    pub num_expr: usize,
    pub expr_basis: Vec<f64>,
    pub pose_basis: Vec<f64>,
    pub vertex_region: Vec<Region>,
    pub charts: Vec<Chart>,
}

impl BodyTemplate {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    /// Pose-corrective features: flattened `R - I` of every non-root joint.
    pub fn num_pose_features(&self) -> usize {
        9 * self.joints.len().saturating_sub(1)
    }

    pub fn chart(&self, region: Region) -> Option<&Chart> {
        self.charts.iter().find(|c| c.region == region)
    }

    pub fn face_region(&self, face: usize) -> Region {
        self.vertex_region[self.faces[face][0] as usize]
    }

    /// Rest joint locations: accumulated parent-chain offsets.
    pub fn rest_joints(&self) -> Vec<Vec3> {
        let mut out: Vec<Vec3> = Vec::with_capacity(self.joints.len());
        for joint in &self.joints {
            let p = if joint.parent < 0 {
                joint.offset
            } else {
                math::add(out[joint.parent as usize], joint.offset)
            };
            out.push(p);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        let bad = |m: String| Err(Error::InvalidTemplate(m));
        if nv == 0 {
            return bad("no vertices".into());
        }
        if self.uvs.len() != nv || self.skin.len() != nv || self.vertex_region.len() != nv {
            return bad("per-vertex arrays disagree in length".into());
        }
        for (f, face) in self.faces.iter().enumerate() {
            if face.iter().any(|&i| i as usize >= nv) {
                return bad(format!("face {f} references a missing vertex"));
            }
        }
        if self.joints.is_empty() || self.joints[0].parent != -1 {
            return bad("joint 0 must be the root".into());
        }
        for (j, joint) in self.joints.iter().enumerate().skip(1) {
            if joint.parent < 0 || joint.parent as usize >= j {
                return bad(format!("joint {j} has parent {} (must precede it)", joint.parent));
            }
        }
        let nj = self.joints.len();
        for (v, sw) in self.skin.iter().enumerate() {
            let mut sum = 0.0;
            for k in 0..MAX_INFLUENCES {
                if sw.weights[k] < 0.0 {
                    return bad(format!("vertex {v} has a negative skinning weight"));
                }
                if sw.weights[k] != 0.0 && sw.joints[k] as usize >= nj {
                    return bad(format!("vertex {v} references a missing joint"));
                }
                sum += sw.weights[k];
            }
            if (sum - 1.0).abs() > UNIT_TOLERANCE {
                return bad(format!("vertex {v} weights sum to {sum}"));
            }
        }
        for (v, uv) in self.uvs.iter().enumerate() {
            if !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1]) {
                return bad(format!("vertex {v} uv {uv:?} outside the unit square"));
            }
        }
        if self.shape_basis.len() != nv * self.num_shape * 3
            || self.expr_basis.len() != nv * self.num_expr * 3
            || self.pose_basis.len() != nv * self.num_pose_features() * 3
        {
            return bad("blend-shape basis sizes disagree with counts".into());
        }
        UvRaster::build(self, UV_CHECK_RESOLUTION)?;
        Ok(())
    }
}

/// Shape `beta`, per-joint rotations `theta` and expression `psi`.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyParams {
    pub beta: Vec<f64>,
    pub theta: Vec<Quat>,
    pub psi: Vec<f64>,
}

impl BodyParams {
    /// Zero shape and expression, identity pose.
    pub fn rest(template: &BodyTemplate) -> Self {
        BodyParams {
            beta: vec![0.0; template.num_shape],
            theta: vec![Quat::IDENTITY; template.num_joints()],
            psi: vec![0.0; template.num_expr],
        }
    }

    fn check(&self, template: &BodyTemplate) -> Result<()> {
        if self.beta.len() != template.num_shape {
            return Err(Error::invalid(format!(
                "beta has {} coefficients, template expects {}",
                self.beta.len(),
                template.num_shape
            )));
        }
        if self.psi.len() != template.num_expr {
            return Err(Error::invalid(format!(
                "psi has {} coefficients, template expects {}",
                self.psi.len(),
                template.num_expr
            )));
        }
        if self.theta.len() != template.num_joints() {
            return Err(Error::invalid(format!(
                "theta has {} rotations, template has {} joints",
                self.theta.len(),
                template.num_joints()
            )));
        }
        for (j, q) in self.theta.iter().enumerate() {
            if (q.norm() - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::invalid(format!(
                    "rotation of joint {j} is not unit (|q| = {})",
                    q.norm()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosedMesh {
    pub vertices: Vec<Vec3>,
    /// Per-joint world transforms relative to the rest pose, row-major 4×4.
    pub joints_world: Vec<[[f64; 4]; 4]>,
}

fn pose_features(theta: &[Quat]) -> Vec<f64> {
    let mut out = Vec::with_capacity(9 * theta.len().saturating_sub(1));
    for q in theta.iter().skip(1) {
        let r = math::mat_sub(&q.to_mat3(), &math::IDENTITY3);
        out.extend(r.iter().flatten());
    }
    out
}

fn add_basis(out: &mut [Vec3], basis: &[f64], coeffs: &[f64]) {
    let k = coeffs.len();
    if k == 0 || coeffs.iter().all(|&c| c == 0.0) {
        return;
    }
    for (v, p) in out.iter_mut().enumerate() {
        let row = &basis[v * k * 3..(v + 1) * k * 3];
        let mut d = [0.0; 3];
        for (c, coeff) in coeffs.iter().enumerate() {
            if *coeff != 0.0 {
                d[0] += row[c * 3] * coeff;
                d[1] += row[c * 3 + 1] * coeff;
                d[2] += row[c * 3 + 2] * coeff;
            }
        }
        *p = math::add(*p, d);
    }
}

fn check_lengths(template: &BodyTemplate, params: &BodyParams) -> Result<()> {
    if params.beta.len() != template.num_shape
        || params.psi.len() != template.num_expr
        || params.theta.len() != template.num_joints()
    {
        return params.check(template);
    }
    Ok(())
}

/// `T_c + B_s(beta) + B_e(psi) + B_p(theta)` per vertex.
pub fn canonical_mesh(template: &BodyTemplate, params: &BodyParams) -> Result<Vec<Vec3>> {
    check_lengths(template, params)?;
    let mut out = template.vertices.clone();
    add_basis(&mut out, &template.shape_basis, &params.beta);
    add_basis(&mut out, &template.expr_basis, &params.psi);
    add_basis(&mut out, &template.pose_basis, &pose_features(&params.theta));
    Ok(out)
}

/// Rest joints translated by the mean shape displacement of the vertices
/// each joint dominates.
pub fn joint_positions(template: &BodyTemplate, beta: &[f64]) -> Result<Vec<Vec3>> {
    if beta.len() != template.num_shape {
        return Err(Error::invalid(format!(
            "beta has {} coefficients, template expects {}",
            beta.len(),
            template.num_shape
        )));
    }
    let mut joints = template.rest_joints();
    if beta.iter().all(|&b| b == 0.0) {
        return Ok(joints);
    }
    let mut displaced = vec![[0.0; 3]; template.num_vertices()];
    add_basis(&mut displaced, &template.shape_basis, beta);
    let mut sums = vec![[0.0; 3]; joints.len()];
    let mut counts = vec![0usize; joints.len()];
    for (v, sw) in template.skin.iter().enumerate() {
        let j = sw.dominant();
        sums[j] = math::add(sums[j], displaced[v]);
        counts[j] += 1;
    }
    for (j, p) in joints.iter_mut().enumerate() {
        if counts[j] > 0 {
            *p = math::add(*p, math::scale(sums[j], 1.0 / counts[j] as f64));
        }
    }
    Ok(joints)
}

/// Linear blend skinning of the canonical mesh.
///
/// Each joint's rigid motion is carried as `(R_j - I, d_j)` where `R_j` is
/// its world rotation and `d_j` the displacement of the joint itself, so a
/// vertex moves by `Σ w (R_j - I)(x - J_j) + d_j`. This equals
/// `Σ w G_j x` for rigid `G_j` and is exactly zero at the rest pose.
pub fn lbs_deform(template: &BodyTemplate, params: &BodyParams) -> Result<PosedMesh> {
    params.check(template)?;
    let canonical = canonical_mesh(template, params)?;
    let joints = joint_positions(template, &params.beta)?;
    let nj = template.num_joints();

    let mut world_rot: Vec<Mat3> = Vec::with_capacity(nj);
    let mut rot_minus_i: Vec<Mat3> = Vec::with_capacity(nj);
    let mut disp: Vec<Vec3> = Vec::with_capacity(nj);
    for (j, joint) in template.joints.iter().enumerate() {
        let local = params.theta[j].to_mat3();
        if joint.parent < 0 {
            world_rot.push(local);
            disp.push([0.0; 3]);
        } else {
            let p = joint.parent as usize;
            let parent_rot = world_rot[p];
            let bone = math::sub(joints[j], joints[p]);
            let d = math::add(disp[p], math::mat_vec(&rot_minus_i[p], bone));
            world_rot.push(math::mat_mul(&parent_rot, &local));
            disp.push(d);
        }
        rot_minus_i.push(math::mat_sub(&world_rot[j], &math::IDENTITY3));
    }

    let vertices = canonical
        .iter()
        .zip(&template.skin)
        .map(|(&x, sw)| {
            let mut delta = [0.0; 3];
            for (j, w) in sw.iter() {
                let local = math::add(math::mat_vec(&rot_minus_i[j], math::sub(x, joints[j])), disp[j]);
                delta = math::add(delta, math::scale(local, w));
            }
            math::add(x, delta)
        })
        .collect();

    let joints_world = (0..nj)
        .map(|j| {
            let r = world_rot[j];
            // x' = R x + (J + d - R J)
            let t = math::sub(math::add(joints[j], disp[j]), math::mat_vec(&r, joints[j]));
            [
                [r[0][0], r[0][1], r[0][2], t[0]],
                [r[1][0], r[1][1], r[1][2], t[1]],
                [r[2][0], r[2][1], r[2][2], t[2]],
                [0.0, 0.0, 0.0, 1.0],
            ]
        })
        .collect();

    Ok(PosedMesh {
        vertices,
        joints_world,
    })
}

/// Applies a rigid 4×4 transform to a point.
pub fn transform_point(m: &[[f64; 4]; 4], p: Vec3) -> Vec3 {
    [
        m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + m[0][3],
        m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + m[1][3],
        m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + m[2][3],
    ]
}

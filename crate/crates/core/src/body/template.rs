//! Procedural capsule-person template.
//!
//! Six tube-shaped parts (head, torso, two arms, two legs), each unwrapped
//! onto its own rectangular UV chart. Chart edges sit on multiples of 1/16
//! so that every chart is made of whole 4×4 texel blocks at resolution 64.

use super::{BodyTemplate, Chart, Joint, Region, SkinWeights};
use crate::math::{self, Vec3};
use crate::rng::SeededRng;

pub const DEFAULT_TEMPLATE_SEED: u64 = 0x5EED;

pub const JOINT_NAMES: [&str; 11] = [
    "root",
    "spine",
    "head",
    "left_shoulder",
    "left_elbow",
    "right_shoulder",
    "right_elbow",
    "left_hip",
    "left_knee",
    "right_hip",
    "right_knee",
];
const PARENTS: [i32; 11] = [-1, 0, 1, 1, 3, 1, 5, 0, 7, 0, 9];
const REST_JOINTS: [Vec3; 11] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.24, 0.0],
    [0.0, 0.5, 0.0],
    [0.19, 0.44, 0.0],
    [0.275, 0.14, 0.0],
    [-0.19, 0.44, 0.0],
    [-0.275, 0.14, 0.0],
    [0.095, -0.04, 0.0],
    [0.102, -0.48, 0.0],
    [-0.095, -0.04, 0.0],
    [-0.102, -0.48, 0.0],
];

const NUM_SHAPE: usize = 4;
const NUM_EXPR: usize = 2;

struct Part {
    region: Region,
    /// Chart in sixteenths of the atlas: `[u0, v0, u1, v1]`.
    chart: [u32; 4],
    around: usize,
    along: usize,
    start: Vec3,
    end: Vec3,
    radius: [f64; 2],
    side: Vec3,
}

fn parts() -> Vec<Part> {
    vec![
        Part {
            region: Region::Torso,
            chart: [0, 0, 8, 8],
            around: 14,
            along: 11,
            start: [0.0, 0.52, 0.0],
            end: [0.0, -0.14, 0.0],
            radius: [0.17, 0.11],
            side: [1.0, 0.0, 0.0],
        },
        Part {
            region: Region::Head,
            chart: [8, 0, 14, 6],
            around: 10,
            along: 9,
            start: [0.0, 0.84, 0.0],
            end: [0.0, 0.5, 0.0],
            radius: [0.11, 0.11],
            side: [1.0, 0.0, 0.0],
        },
        Part {
            region: Region::LeftArm,
            chart: [0, 8, 4, 16],
            around: 8,
            along: 9,
            start: [0.19, 0.44, 0.0],
            end: [0.36, -0.16, 0.0],
            radius: [0.05, 0.05],
            side: [0.0, 0.0, 1.0],
        },
        Part {
            region: Region::RightArm,
            chart: [4, 8, 8, 16],
            around: 8,
            along: 9,
            start: [-0.19, 0.44, 0.0],
            end: [-0.36, -0.16, 0.0],
            radius: [0.05, 0.05],
            side: [0.0, 0.0, 1.0],
        },
        Part {
            region: Region::LeftLeg,
            chart: [8, 6, 12, 16],
            around: 8,
            along: 11,
            start: [0.095, -0.04, 0.0],
            end: [0.11, -0.92, 0.0],
            radius: [0.075, 0.08],
            side: [1.0, 0.0, 0.0],
        },
        Part {
            region: Region::RightLeg,
            chart: [12, 6, 16, 16],
            around: 8,
            along: 11,
            start: [-0.095, -0.04, 0.0],
            end: [-0.11, -0.92, 0.0],
            radius: [0.075, 0.08],
            side: [1.0, 0.0, 0.0],
        },
    ]
}

fn smoothstep(lo: f64, hi: f64, x: f64) -> f64 {
    let t = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Skinning weights from a vertex's part and position `t ∈ [0,1]` along it.
fn part_weights(region: Region, t: f64) -> SkinWeights {
    let blend = |upper: u32, lower: u32, extra: Option<(u32, f64)>| {
        let s = smoothstep(0.4, 0.6, t);
        let mut pairs = vec![(upper, 1.0 - s), (lower, s)];
        if let Some((j, w)) = extra {
            pairs.push((j, w));
        }
        SkinWeights::from_pairs(&pairs)
    };
    let fade = (1.0 - t / 0.12).max(0.0) * 0.3;
    match region {
        Region::Head => SkinWeights::single(2),
        Region::Torso => {
            let s = smoothstep(0.35, 0.65, t);
            SkinWeights::from_pairs(&[(1, 1.0 - s), (0, s)])
        }
        Region::LeftArm => blend(3, 4, Some((1, fade))),
        Region::RightArm => blend(5, 6, Some((1, fade))),
        Region::LeftLeg => blend(7, 8, Some((0, fade))),
        Region::RightLeg => blend(9, 10, Some((0, fade))),
    }
}

/// Builds the toy template. The seed only drives the pose-corrective basis;
/// everything else is fixed geometry.
pub fn default_template(seed: u64) -> BodyTemplate {
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::new();
    let mut skin = Vec::new();
    let mut vertex_region = Vec::new();
    let mut radial = Vec::new();
    let mut along_t = Vec::new();
    let mut charts = Vec::new();

    for part in parts() {
        let [cu0, cv0, cu1, cv1] = part.chart.map(|c| c as f64 / 16.0);
        charts.push(Chart {
            region: part.region,
            u0: cu0,
            v0: cv0,
            u1: cu1,
            v1: cv1,
        });
        let axis = math::normalize(math::sub(part.end, part.start));
        let side = math::normalize(math::sub(
            part.side,
            math::scale(axis, math::dot(part.side, axis)),
        ));
        let front = math::cross(side, axis);
        let base = vertices.len() as u32;
        let cols = part.around + 1;
        for j in 0..part.along {
            let t = j as f64 / (part.along - 1) as f64;
            let profile = (std::f64::consts::PI * (0.06 + 0.88 * t)).sin().sqrt();
            let center = math::add(part.start, math::scale(math::sub(part.end, part.start), t));
            for i in 0..cols {
                let phi = std::f64::consts::TAU * i as f64 / part.around as f64;
                let offset = math::add(
                    math::scale(side, part.radius[0] * profile * phi.cos()),
                    math::scale(front, part.radius[1] * profile * phi.sin()),
                );
                vertices.push(math::add(center, offset));
                radial.push(offset);
                along_t.push(t);
                uvs.push([
                    cu0 + (cu1 - cu0) * i as f64 / part.around as f64,
                    cv0 + (cv1 - cv0) * t,
                ]);
                skin.push(part_weights(part.region, t));
                vertex_region.push(part.region);
            }
        }
        for j in 0..part.along - 1 {
            for i in 0..part.around {
                let a = base + (j * cols + i) as u32;
                let b = a + 1;
                let c = a + cols as u32;
                let d = c + 1;
                for tri in [[a, c, b], [b, c, d]] {
                    let [p0, p1, p2] = tri.map(|k| vertices[k as usize]);
                    let n = math::cross(math::sub(p1, p0), math::sub(p2, p0));
                    let out = math::add(math::add(radial[tri[0] as usize], radial[tri[1] as usize]), radial[tri[2] as usize]);
                    if math::dot(n, out) >= 0.0 {
                        faces.push(tri);
                    } else {
                        faces.push([tri[0], tri[2], tri[1]]);
                    }
                }
            }
        }
    }

    let nv = vertices.len();
    let mut shape_basis = vec![0.0; nv * NUM_SHAPE * 3];
    let mut expr_basis = vec![0.0; nv * NUM_EXPR * 3];
    for v in 0..nv {
        let p = vertices[v];
        let row = &mut shape_basis[v * NUM_SHAPE * 3..(v + 1) * NUM_SHAPE * 3];
        row[0..3].copy_from_slice(&math::scale(p, 0.1));
        row[4] = 0.1 * p[1];
        row[6..9].copy_from_slice(&math::scale(radial[v], 0.3));
        row[9] = match vertex_region[v] {
            Region::LeftArm => 0.03,
            Region::RightArm => -0.03,
            _ => 0.0,
        };
        if vertex_region[v] == Region::Head {
            let row = &mut expr_basis[v * NUM_EXPR * 3..(v + 1) * NUM_EXPR * 3];
            if radial[v][2] > 0.0 && along_t[v] > 0.55 {
                row[1] = -0.01;
                row[2] = 0.005;
            }
            row[3..6].copy_from_slice(&math::scale(radial[v], 0.05));
        }
    }

    let joints: Vec<Joint> = (0..JOINT_NAMES.len())
        .map(|j| {
            let parent = PARENTS[j];
            let offset = if parent < 0 {
                REST_JOINTS[j]
            } else {
                math::sub(REST_JOINTS[j], REST_JOINTS[parent as usize])
            };
            Joint {
                name: JOINT_NAMES[j].to_string(),
                parent,
                offset,
            }
        })
        .collect();

    let num_pose = 9 * (joints.len() - 1);
    let mut pose_basis = vec![0.0; nv * num_pose * 3];
    let mut rng = SeededRng::new(seed, 0x7E3);
    for v in 0..nv {
        for (j, w) in skin[v].iter() {
            if j == 0 {
                continue;
            }
            for f in 0..9 {
                for axis in 0..3 {
                    let idx = (v * num_pose + (j - 1) * 9 + f) * 3 + axis;
                    pose_basis[idx] = 0.002 * w * rng.uniform_range(-1.0, 1.0);
                }
            }
        }
    }

    BodyTemplate {
        vertices,
        faces,
        uvs,
        joints,
        skin,
        num_shape: NUM_SHAPE,
        shape_basis,
        num_expr: NUM_EXPR,
        expr_basis,
        pose_basis,
        vertex_region,
        charts,
    }
}

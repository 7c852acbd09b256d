use super::{Camera, Splat2D, COV_DILATION, NEAR_PLANE};
use crate::gaussians::GaussianSet;
use crate::math::{self, Mat3, Quat, Vec3};

/// Projection output; `splats[i].source` indexes the input set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Projected {
    pub splats: Vec<Splat2D>,
    pub culled: usize,
}

/// `Σ = R S Sᵀ Rᵀ` with `R` from the normalized quaternion.
pub fn covariance_3d(rotation: Quat, scale: Vec3) -> Mat3 {
    let r = rotation.normalized().to_mat3();
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| r[i][k] * scale[k] * scale[k] * r[j][k]).sum();
        }
    }
    out
}

/// `J M Jᵀ` for a 2×3 `J` and symmetric 3×3 `M`, as `(xx, xy, yy)`.
pub(crate) fn sandwich(j: &[[f64; 3]; 2], m: &Mat3) -> [f64; 3] {
    let jm: [[f64; 3]; 2] =
        std::array::from_fn(|r| std::array::from_fn(|c| (0..3).map(|k| j[r][k] * m[k][c]).sum()));
    let e = |a: usize, b: usize| (0..3).map(|k| jm[a][k] * j[b][k]).sum::<f64>();
    [e(0, 0), e(0, 1), e(1, 1)]
}

pub(crate) fn camera_covariance(cam: &Camera, sigma: &Mat3) -> Mat3 {
    let w = &cam.rotation;
    math::mat_mul(&math::mat_mul(w, sigma), &math::transpose(w))
}

/// Projects every primitive in front of the near plane.
pub fn project(set: &GaussianSet, cam: &Camera) -> Projected {
    let mut out = Projected::default();
    for (i, g) in set.gaussians.iter().enumerate() {
        let pc = cam.to_camera(g.mean);
        let (mean2d, depth) = cam.project_point(pc);
        if !(depth > NEAR_PLANE) || !mean2d.iter().all(|v| v.is_finite()) {
            out.culled += 1;
            continue;
        }
        let m = camera_covariance(cam, &covariance_3d(g.rotation, g.scale));
        let mut cov2d = sandwich(&cam.projection_jacobian(pc), &m);
        cov2d[0] += COV_DILATION;
        cov2d[2] += COV_DILATION;
        out.splats.push(Splat2D {
            mean2d,
            cov2d,
            depth,
            color: g.color,
            opacity: g.opacity,
            source: i,
        });
    }
    out
}

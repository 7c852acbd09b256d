use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    /// Parallel projection, `scale` pixels per meter, centered on the image.
    Orthographic { scale: f64 },
    /// Perspective projection with focal length and principal point in pixels.
    Pinhole { focal: f64, cx: f64, cy: f64 },
}

/// World-to-camera rigid transform plus intrinsics. The camera looks along
/// its local −z axis with +y up; image rows grow downward.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub projection: Projection,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
}

impl Camera {
    pub fn new(
        projection: Projection,
        rotation: Mat3,
        translation: Vec3,
        width: usize,
        height: usize,
        background: [f64; 3],
    ) -> Result<Camera> {
        let cam = Camera {
            projection,
            rotation,
            translation,
            width,
            height,
            background,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target` with the given up direction.
    pub fn look_at(
        projection: Projection,
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        width: usize,
        height: usize,
        background: [f64; 3],
    ) -> Result<Camera> {
        let back = math::sub(eye, target);
        if math::norm(back) < 1e-12 {
            return Err(Error::invalid("camera eye coincides with its target"));
        }
        let z = math::normalize(back);
        let side = math::cross(up, z);
        if math::norm(side) < 1e-12 {
            return Err(Error::invalid("camera up vector is parallel to the view direction"));
        }
        let x = math::normalize(side);
        let y = math::cross(z, x);
        let rotation = [x, y, z];
        let translation = math::scale(math::mat_vec(&rotation, eye), -1.0);
        Camera::new(projection, rotation, translation, width, height, background)
    }

    /// Camera circling the vertical axis through `target`; yaw 0 sits on +z.
    pub fn orbit(
        projection: Projection,
        yaw_degrees: f64,
        target: Vec3,
        distance: f64,
        width: usize,
        height: usize,
        background: [f64; 3],
    ) -> Result<Camera> {
        let (s, c) = yaw_degrees.to_radians().sin_cos();
        let eye = math::add(target, [distance * s, 0.0, distance * c]);
        Camera::look_at(projection, eye, target, [0.0, 1.0, 0.0], width, height, background)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera image must be non-empty"));
        }
        if math::orthonormality_error(&self.rotation) > 1e-6 || det3(&self.rotation) < 0.0 {
            return Err(Error::invalid("camera rotation is not a proper rotation"));
        }
        let ok = match self.projection {
            Projection::Orthographic { scale } => scale > 0.0 && scale.is_finite(),
            Projection::Pinhole { focal, cx, cy } => {
                focal > 0.0 && focal.is_finite() && cx.is_finite() && cy.is_finite()
            }
        };
        if !ok {
            return Err(Error::invalid("camera focal length or scale must be positive"));
        }
        if self.translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("camera translation must be finite"));
        }
        Ok(())
    }

    pub fn pose(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = self.translation;
        [
            [r[0][0], r[0][1], r[0][2], t[0]],
            [r[1][0], r[1][1], r[1][2], t[1]],
            [r[2][0], r[2][1], r[2][2], t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        math::add(math::mat_vec(&self.rotation, p), self.translation)
    }

    /// Pixel position and depth of a camera-space point.
    pub fn project_point(&self, pc: Vec3) -> ([f64; 2], f64) {
        let depth = -pc[2];
        let px = match self.projection {
            Projection::Orthographic { scale } => [
                0.5 * self.width as f64 + scale * pc[0],
                0.5 * self.height as f64 - scale * pc[1],
            ],
            Projection::Pinhole { focal, cx, cy } => {
                [cx + focal * pc[0] / depth, cy - focal * pc[1] / depth]
            }
        };
        (px, depth)
    }

    /// Jacobian of `project_point` with respect to the camera-space point.
    pub fn projection_jacobian(&self, pc: Vec3) -> [[f64; 3]; 2] {
        match self.projection {
            Projection::Orthographic { scale } => [[scale, 0.0, 0.0], [0.0, -scale, 0.0]],
            Projection::Pinhole { focal, .. } => {
                let d = -pc[2];
                let d2 = d * d;
                [
                    [focal / d, 0.0, focal * pc[0] / d2],
                    [0.0, -focal / d, -focal * pc[1] / d2],
                ]
            }
        }
    }
}

fn det3(m: &Mat3) -> f64 {
    math::dot(m[0], math::cross(m[1], m[2]))
}

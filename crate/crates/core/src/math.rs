//! Small fixed-size linear algebra used by the body model, the Gaussian
//! representation and the renderer. Everything here is `f64`.

use std::ops::{Add, Mul, Neg, Sub};

pub type Vec3 = [f64; 3];
/// Row-major 3×3 matrix.
pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n > 0.0 {
        scale(a, 1.0 / n)
    } else {
        a
    }
}

#[inline]
pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub fn mat_sub(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][j] - b[i][j];
        }
    }
    out
}

/// Maximum deviation of `mᵀm` from the identity.
pub fn orthonormality_error(m: &Mat3) -> f64 {
    let p = mat_mul(&transpose(m), m);
    let mut err: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            err = err.max((p[i][j] - target).abs());
        }
    }
    err
}

/// Quaternion stored as `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Quat::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let a = normalize(axis);
        let (s, c) = (angle * 0.5).sin_cos();
        Quat::new(c, a[0] * s, a[1] * s, a[2] * s)
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(self) -> Self {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn is_identity(self) -> bool {
        self == Quat::IDENTITY
    }

    /// Rotation matrix of a unit quaternion.
    pub fn to_mat3(self) -> Mat3 {
        let Quat { w, x, y, z } = self;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    /// Unit quaternion of a proper rotation matrix (Shepperd's method).
    pub fn from_mat3(m: &Mat3) -> Self {
        let trace = m[0][0] + m[1][1] + m[2][2];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quat::new(
                0.25 * s,
                (m[2][1] - m[1][2]) / s,
                (m[0][2] - m[2][0]) / s,
                (m[1][0] - m[0][1]) / s,
            )
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            Quat::new(
                (m[2][1] - m[1][2]) / s,
                0.25 * s,
                (m[0][1] + m[1][0]) / s,
                (m[0][2] + m[2][0]) / s,
            )
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            Quat::new(
                (m[0][2] - m[2][0]) / s,
                (m[0][1] + m[1][0]) / s,
                0.25 * s,
                (m[1][2] + m[2][1]) / s,
            )
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            Quat::new(
                (m[1][0] - m[0][1]) / s,
                (m[0][2] + m[2][0]) / s,
                (m[1][2] + m[2][1]) / s,
                0.25 * s,
            )
        };
        let q = q.normalized();
        if q.w < 0.0 {
            -q
        } else {
            q
        }
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        mat_vec(&self.to_mat3(), v)
    }

    /// Matrix `L(a)` such that `a * b == L(a) · b` in `(w, x, y, z)` order.
    pub fn left_matrix(self) -> [[f64; 4]; 4] {
        let Quat { w, x, y, z } = self;
        [
            [w, -x, -y, -z],
            [x, w, -z, y],
            [y, z, w, -x],
            [z, -y, x, w],
        ]
    }
}

impl Mul for Quat {
    type Output = Quat;
    fn mul(self, b: Quat) -> Quat {
        let a = self;
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

impl Neg for Quat {
    type Output = Quat;
    fn neg(self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }
}

impl Add for Quat {
    type Output = Quat;
    fn add(self, b: Quat) -> Quat {
        Quat::new(self.w + b.w, self.x + b.x, self.y + b.y, self.z + b.z)
    }
}

impl Sub for Quat {
    type Output = Quat;
    fn sub(self, b: Quat) -> Quat {
        Quat::new(self.w - b.w, self.x - b.x, self.y - b.y, self.z - b.z)
    }
}

/// Derivatives of the rotation matrix of a unit quaternion with respect to
/// each of its four components, `[dR/dw, dR/dx, dR/dy, dR/dz]`.
pub fn rotation_jacobian(q: Quat) -> [Mat3; 4] {
    let Quat { w, x, y, z } = q;
    let t = 2.0;
    [
        [[0.0, -t * z, t * y], [t * z, 0.0, -t * x], [-t * y, t * x, 0.0]],
        [
            [0.0, t * y, t * z],
            [t * y, -2.0 * t * x, -t * w],
            [t * z, t * w, -2.0 * t * x],
        ],
        [
            [-2.0 * t * y, t * x, t * w],
            [t * x, 0.0, t * z],
            [-t * w, t * z, -2.0 * t * y],
        ],
        [
            [-2.0 * t * z, -t * w, t * x],
            [t * w, -2.0 * t * z, t * y],
            [t * x, t * y, 0.0],
        ],
    ]
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quaternion_matrix_round_trip() {
        let q = Quat::new(0.3, -0.5, 0.7, 0.2).normalized();
        let back = Quat::from_mat3(&q.to_mat3());
        let q = if q.w < 0.0 { -q } else { q };
        for (a, b) in q.to_array().iter().zip(back.to_array()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(orthonormality_error(&q.to_mat3()) < 1e-12);
    }

    #[test]
    fn product_matches_matrix_composition() {
        let a = Quat::from_axis_angle([1.0, 2.0, 0.5], 0.7);
        let b = Quat::from_axis_angle([-0.3, 0.2, 1.0], 1.9);
        let lhs = (a * b).to_mat3();
        let rhs = mat_mul(&a.to_mat3(), &b.to_mat3());
        for i in 0..3 {
            for j in 0..3 {
                assert!((lhs[i][j] - rhs[i][j]).abs() < 1e-12);
            }
        }
        let l = a.left_matrix();
        let bv = b.to_array();
        let ab = (a * b).to_array();
        for i in 0..4 {
            let v: f64 = (0..4).map(|k| l[i][k] * bv[k]).sum();
            assert!((v - ab[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_jacobian_matches_finite_differences() {
        let q = Quat::new(0.4, 0.1, -0.6, 0.3);
        let jac = rotation_jacobian(q);
        let h = 1e-6;
        for k in 0..4 {
            let mut p = q.to_array();
            let mut m = q.to_array();
            p[k] += h;
            m[k] -= h;
            let rp = Quat::from_array(p).to_mat3();
            let rm = Quat::from_array(m).to_mat3();
            for i in 0..3 {
                for j in 0..3 {
                    let fd = (rp[i][j] - rm[i][j]) / (2.0 * h);
                    assert!((fd - jac[k][i][j]).abs() < 1e-6, "k={k} i={i} j={j}");
                }
            }
        }
    }
}

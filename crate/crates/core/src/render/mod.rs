//! Tile-based CPU splatting: projection of 3D Gaussians to screen-space
//! ellipses, front-to-back alpha compositing and the analytic reverse pass.

mod backward;
mod camera;
mod image;
mod project;
mod raster;

pub use backward::{project_backward, rasterize_backward, render_backward, SplatGrad};
pub use camera::{Camera, Projection};
pub use image::{encode_png, encode_ppm, RenderedImage};
pub use project::{covariance_3d, project, Projected};
pub use raster::{rasterize, rasterize_reference, render, RenderStats};

/// EWA dilation added to the diagonal of every screen-space covariance.
pub const COV_DILATION: f64 = 0.3;
/// Primitives with camera depth at or below this are dropped.
pub const NEAR_PLANE: f64 = 0.01;
pub const MAX_SPLAT_ALPHA: f64 = 0.999;
pub const TRANSMITTANCE_CUTOFF: f64 = 1e-4;
/// Splat support in standard deviations; beyond it a splat contributes nothing.
pub const SUPPORT_SIGMAS: f64 = 3.0;
pub const TILE_SIZE: usize = 16;

/// A projected Gaussian. `cov2d` stores the symmetric matrix as
/// `(xx, xy, yy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f64; 2],
    pub cov2d: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    pub source: usize,
}

impl Splat2D {
    /// Inverse covariance `(a, b, c)` or `None` if not positive-definite.
    pub fn conic(&self) -> Option<[f64; 3]> {
        let [xx, xy, yy] = self.cov2d;
        let det = xx * yy - xy * xy;
        if !(det > 0.0) || !(xx > 0.0) || !det.is_finite() {
            return None;
        }
        Some([yy / det, -xy / det, xx / det])
    }

    /// Pixel-space radius enclosing the support ellipse.
    pub fn radius(&self) -> f64 {
        let [xx, xy, yy] = self.cov2d;
        let mid = 0.5 * (xx + yy);
        let det = xx * yy - xy * xy;
        let lambda = mid + (mid * mid - det).max(0.0).sqrt();
        SUPPORT_SIGMAS * lambda.sqrt()
    }
}

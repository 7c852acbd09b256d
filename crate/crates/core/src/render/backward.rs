use rayon::prelude::*;

use super::project::{camera_covariance, covariance_3d, project, Projected};
use super::raster::{bin_tiles, composite_pixel, prepare, Contribution};
use super::{Camera, Projection, Splat2D, TILE_SIZE};
use crate::error::{Error, Result};
use crate::gaussians::{GaussianGrad, GaussianSet};
use crate::math::{self, Mat3};

/// Gradient with respect to one splat. `cov2d[1]` is the derivative with
/// respect to the stored off-diagonal term, which appears twice in the
/// symmetric matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SplatGrad {
    pub mean2d: [f64; 2],
    pub cov2d: [f64; 3],
    pub color: [f64; 3],
    pub opacity: f64,
}

#[derive(Clone, Copy, Default)]
struct Partial {
    mean2d: [f64; 2],
    conic: [f64; 3],
    color: [f64; 3],
    opacity: f64,
}

impl Partial {
    fn add(&mut self, o: &Partial) {
        for k in 0..2 {
            self.mean2d[k] += o.mean2d[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

fn pixel_backward(
    splats: &[Splat2D],
    conics: &[[f64; 3]],
    contributions: &[Contribution],
    t_final: f64,
    g: [f64; 3],
    bg: [f64; 3],
    mut sink: impl FnMut(usize, &Partial),
) {
    let mut after = [t_final * bg[0], t_final * bg[1], t_final * bg[2]];
    for c in contributions.iter().rev() {
        let s = &splats[c.splat];
        let (sigma, t) = (c.sigma, c.t_before);
        let mut p = Partial::default();
        let mut d_sigma = 0.0;
        for k in 0..3 {
            p.color[k] = g[k] * sigma * t;
            d_sigma += g[k] * (s.color[k] * t - after[k] / (1.0 - sigma));
            after[k] += s.color[k] * sigma * t;
        }
        if !c.clamped {
            let a = &conics[c.splat];
            let [dx, dy] = c.delta;
            let q = 0.5 * (a[0] * dx * dx + 2.0 * a[1] * dx * dy + a[2] * dy * dy);
            p.opacity = d_sigma * (-q).exp();
            let d_q = -d_sigma * sigma;
            p.mean2d = [-d_q * (a[0] * dx + a[1] * dy), -d_q * (a[1] * dx + a[2] * dy)];
            p.conic = [0.5 * d_q * dx * dx, d_q * dx * dy, 0.5 * d_q * dy * dy];
        }
        sink(c.splat, &p);
    }
}

/// Reverse of `rasterize` for an RGB loss gradient (`height × width × 3`).
/// Per-tile partial sums are merged in tile order, so results do not depend
/// on the thread count.
pub fn rasterize_backward(splats: &[Splat2D], cam: &Camera, grad_rgb: &[f64]) -> Result<Vec<SplatGrad>> {
    cam.validate()?;
    let (w, h) = (cam.width, cam.height);
    if grad_rgb.len() != w * h * 3 {
        return Err(Error::invalid(format!(
            "gradient has {} values for a {w}×{h} RGB image",
            grad_rgb.len()
        )));
    }
    let (order, conics, _) = prepare(splats);
    let bins = bin_tiles(splats, &order, cam);
    let bg = cam.background;
    let tile_partials: Vec<Vec<(usize, Partial)>> = (0..bins.tiles_x * bins.tiles_y)
        .into_par_iter()
        .map(|tile| {
            let list = &bins.lists[tile];
            if list.is_empty() {
                return Vec::new();
            }
            let (tx, ty) = (tile % bins.tiles_x, tile / bins.tiles_x);
            let mut local: Vec<(usize, Partial)> = list.iter().map(|&i| (i, Partial::default())).collect();
            let mut slots = std::collections::HashMap::with_capacity(list.len());
            for (k, &i) in list.iter().enumerate() {
                slots.insert(i, k);
            }
            let mut contributions = Vec::new();
            for y in ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(h) {
                for x in tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(w) {
                    let pix = y * w + x;
                    let g = [grad_rgb[pix * 3], grad_rgb[pix * 3 + 1], grad_rgb[pix * 3 + 2]];
                    if g == [0.0; 3] {
                        continue;
                    }
                    contributions.clear();
                    let p = [x as f64 + 0.5, y as f64 + 0.5];
                    let (_, t_final) = composite_pixel(splats, &conics, list, p, |c| contributions.push(c));
                    pixel_backward(splats, &conics, &contributions, t_final, g, bg, |i, part| {
                        local[slots[&i]].1.add(part);
                    });
                }
            }
            local
        })
        .collect();
    let mut acc = vec![Partial::default(); splats.len()];
    for partials in &tile_partials {
        for (i, p) in partials {
            acc[*i].add(p);
        }
    }
    Ok(acc
        .iter()
        .zip(&conics)
        .map(|(p, a)| {
            // dL/dCov = -A · dL/dA · A with the conic gradient as a
            // symmetric matrix.
            let ga = [[p.conic[0], 0.5 * p.conic[1]], [0.5 * p.conic[1], p.conic[2]]];
            let am = [[a[0], a[1]], [a[1], a[2]]];
            let mut gc = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        for l in 0..2 {
                            gc[i][j] -= am[i][k] * ga[k][l] * am[l][j];
                        }
                    }
                }
            }
            SplatGrad {
                mean2d: p.mean2d,
                cov2d: [gc[0][0], gc[0][1] + gc[1][0], gc[1][1]],
                color: p.color,
                opacity: p.opacity,
            }
        })
        .collect())
}

/// Derivatives of the pinhole Jacobian entries with respect to the
/// camera-space point: `out[r][c]` is `∂J[r][c]/∂pc`.
fn pinhole_jacobian_derivative(focal: f64, pc: [f64; 3]) -> [[[f64; 3]; 3]; 2] {
    let d = -pc[2];
    let (d2, d3) = (d * d, d * d * d);
    [
        [
            [0.0, 0.0, focal / d2],
            [0.0; 3],
            [focal / d2, 0.0, 2.0 * focal * pc[0] / d3],
        ],
        [
            [0.0; 3],
            [0.0, 0.0, -focal / d2],
            [0.0, -focal / d2, -2.0 * focal * pc[1] / d3],
        ],
    ]
}

/// Chains splat gradients back to the 3D primitives. Culled primitives get
/// zero gradients.
pub fn project_backward(
    set: &GaussianSet,
    cam: &Camera,
    projected: &Projected,
    grads: &[SplatGrad],
) -> Result<Vec<GaussianGrad>> {
    if grads.len() != projected.splats.len() {
        return Err(Error::invalid("one gradient per projected splat is required"));
    }
    let mut out = vec![GaussianGrad::default(); set.len()];
    let w = &cam.rotation;
    let wt = math::transpose(w);
    for (s, g) in projected.splats.iter().zip(grads) {
        let gauss = &set.gaussians[s.source];
        let pc = cam.to_camera(gauss.mean);
        let j = cam.projection_jacobian(pc);
        let sigma = covariance_3d(gauss.rotation, gauss.scale);
        let m = camera_covariance(cam, &sigma);
        let gc = [[g.cov2d[0], 0.5 * g.cov2d[1]], [0.5 * g.cov2d[1], g.cov2d[2]]];

        let mut d_pc = [0.0; 3];
        for c in 0..3 {
            d_pc[c] = j[0][c] * g.mean2d[0] + j[1][c] * g.mean2d[1];
        }
        if let Projection::Pinhole { focal, .. } = cam.projection {
            // dL/dJ = 2 Gc J M
            let mut d_j = [[0.0; 3]; 2];
            for r in 0..2 {
                for c in 0..3 {
                    d_j[r][c] = 2.0
                        * (0..2)
                            .map(|a| gc[r][a] * (0..3).map(|k| j[a][k] * m[k][c]).sum::<f64>())
                            .sum::<f64>();
                }
            }
            let dj = pinhole_jacobian_derivative(focal, pc);
            for r in 0..2 {
                for c in 0..3 {
                    for axis in 0..3 {
                        d_pc[axis] += d_j[r][c] * dj[r][c][axis];
                    }
                }
            }
        }
        let d_mean = math::mat_vec(&wt, d_pc);

        let mut d_m: Mat3 = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                d_m[a][b] = (0..2)
                    .map(|r| (0..2).map(|c| j[r][a] * gc[r][c] * j[c][b]).sum::<f64>())
                    .sum();
            }
        }
        let d_sigma = math::mat_mul(&math::mat_mul(&wt, &d_m), w);

        let qn = gauss.rotation.normalized();
        let r = qn.to_mat3();
        let s2 = gauss.scale.map(|v| v * v);
        let mut d_scale = [0.0; 3];
        for (i, ds) in d_scale.iter_mut().enumerate() {
            let mut acc = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    acc += d_sigma[a][b] * r[a][i] * r[b][i];
                }
            }
            *ds = 2.0 * gauss.scale[i] * acc;
        }
        let mut d_r = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                let sym: f64 = (0..3).map(|d| (d_sigma[a][d] + d_sigma[d][a]) * r[d][b]).sum();
                d_r[a][b] = s2[b] * sym;
            }
        }
        let jac = math::rotation_jacobian(qn);
        let d_qn: [f64; 4] = std::array::from_fn(|k| {
            (0..3).map(|a| (0..3).map(|b| d_r[a][b] * jac[k][a][b]).sum::<f64>()).sum()
        });
        let qa = qn.to_array();
        let proj: f64 = (0..4).map(|k| qa[k] * d_qn[k]).sum();
        let norm = gauss.rotation.norm();
        let d_rot = std::array::from_fn(|k| (d_qn[k] - qa[k] * proj) / norm);

        out[s.source] = GaussianGrad {
            mean: d_mean,
            rotation: d_rot,
            scale: d_scale,
            color: g.color,
            opacity: g.opacity,
        };
    }
    Ok(out)
}

/// Gradient of an RGB image loss with respect to every primitive.
pub fn render_backward(set: &GaussianSet, cam: &Camera, grad_rgb: &[f64]) -> Result<Vec<GaussianGrad>> {
    let projected = project(set, cam);
    let splat_grads = rasterize_backward(&projected.splats, cam, grad_rgb)?;
    project_backward(set, cam, &projected, &splat_grads)
}

use rayon::prelude::*;

use super::project::project;
use super::{
    Camera, RenderedImage, Splat2D, MAX_SPLAT_ALPHA, SUPPORT_SIGMAS, TILE_SIZE,
    TRANSMITTANCE_CUTOFF,
};
use crate::error::{Error, Result};
use crate::gaussians::GaussianSet;

const MAX_MAHALANOBIS2: f64 = SUPPORT_SIGMAS * SUPPORT_SIGMAS;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RenderStats {
    pub splats: usize,
    /// Primitives dropped behind the near plane.
    pub culled: usize,
    /// Splats skipped for a non-positive-definite covariance.
    pub skipped_non_pd: usize,
    pub tiles_touched: usize,
    /// Mean number of splats composited into each pixel.
    pub avg_splats_per_pixel: f64,
}

/// One composited contribution at a pixel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Contribution {
    /// Index into the splat list.
    pub splat: usize,
    pub sigma: f64,
    pub clamped: bool,
    /// Transmittance before this splat.
    pub t_before: f64,
    pub delta: [f64; 2],
}

/// Splat `s` evaluated at pixel center `p`: `(σ, clamped, d)` or `None`
/// outside its support.
#[inline]
pub(crate) fn evaluate(s: &Splat2D, conic: &[f64; 3], p: [f64; 2]) -> Option<(f64, bool, [f64; 2])> {
    let d = [p[0] - s.mean2d[0], p[1] - s.mean2d[1]];
    let m2 = conic[0] * d[0] * d[0] + 2.0 * conic[1] * d[0] * d[1] + conic[2] * d[1] * d[1];
    if !(m2 <= MAX_MAHALANOBIS2) {
        return None;
    }
    let raw = s.opacity * (-0.5 * m2).exp();
    if raw > MAX_SPLAT_ALPHA {
        Some((MAX_SPLAT_ALPHA, true, d))
    } else {
        Some((raw, false, d))
    }
}

/// Front-to-back compositing of `order` (already depth sorted) at one pixel.
/// Calls `visit` for each composited splat; returns `(color, T_final)`.
#[inline]
pub(crate) fn composite_pixel(
    splats: &[Splat2D],
    conics: &[[f64; 3]],
    order: &[usize],
    p: [f64; 2],
    mut visit: impl FnMut(Contribution),
) -> ([f64; 3], f64) {
    let mut t = 1.0;
    let mut c = [0.0; 3];
    for &i in order {
        let s = &splats[i];
        let Some((sigma, clamped, delta)) = evaluate(s, &conics[i], p) else { continue };
        let next = t * (1.0 - sigma);
        if next < TRANSMITTANCE_CUTOFF {
            break;
        }
        for k in 0..3 {
            c[k] += s.color[k] * sigma * t;
        }
        visit(Contribution {
            splat: i,
            sigma,
            clamped,
            t_before: t,
            delta,
        });
        t = next;
    }
    (c, t)
}

/// Splats with a usable covariance, sorted by (depth, source index), and the
/// conic of every splat (zero for unusable ones).
pub(crate) fn prepare(splats: &[Splat2D]) -> (Vec<usize>, Vec<[f64; 3]>, usize) {
    let mut skipped = 0;
    let mut conics = vec![[0.0; 3]; splats.len()];
    let mut order = Vec::with_capacity(splats.len());
    for (i, s) in splats.iter().enumerate() {
        match s.conic() {
            Some(c) if s.depth.is_finite() => {
                conics[i] = c;
                order.push(i);
            }
            _ => skipped += 1,
        }
    }
    order.sort_by(|&a, &b| {
        splats[a]
            .depth
            .total_cmp(&splats[b].depth)
            .then(splats[a].source.cmp(&splats[b].source))
            .then(a.cmp(&b))
    });
    (order, conics, skipped)
}

pub(crate) struct TileBins {
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub lists: Vec<Vec<usize>>,
}

pub(crate) fn bin_tiles(splats: &[Splat2D], order: &[usize], cam: &Camera) -> TileBins {
    let tiles_x = cam.width.div_ceil(TILE_SIZE);
    let tiles_y = cam.height.div_ceil(TILE_SIZE);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for &i in order {
        let s = &splats[i];
        let r = s.radius();
        // Pixels whose centers lie within the radius of the mean.
        let span = |m: f64, n: usize| -> Option<(usize, usize)> {
            let lo = (m - r - 0.5).ceil().max(0.0);
            let hi = (m + r - 0.5).floor().min(n as f64 - 1.0);
            (lo <= hi && hi.is_finite() && lo.is_finite()).then(|| (lo as usize, hi as usize))
        };
        let (Some((x0, x1)), Some((y0, y1))) = (span(s.mean2d[0], cam.width), span(s.mean2d[1], cam.height))
        else {
            continue;
        };
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                lists[ty * tiles_x + tx].push(i);
            }
        }
    }
    TileBins {
        tiles_x,
        tiles_y,
        lists,
    }
}

fn check_camera(cam: &Camera) -> Result<()> {
    cam.validate()?;
    if cam.width.checked_mul(cam.height).is_none() {
        return Err(Error::invalid("image too large"));
    }
    Ok(())
}

/// Tiled, parallel rasterization. Deterministic for any thread count: each
/// tile owns a disjoint pixel block.
pub fn rasterize(splats: &[Splat2D], cam: &Camera) -> Result<(RenderedImage, RenderStats)> {
    check_camera(cam)?;
    let (order, conics, skipped) = prepare(splats);
    let bins = bin_tiles(splats, &order, cam);
    let (w, h) = (cam.width, cam.height);
    let bg = cam.background;
    let blocks: Vec<(Vec<[f64; 4]>, usize)> = (0..bins.tiles_x * bins.tiles_y)
        .into_par_iter()
        .map(|tile| {
            let list = &bins.lists[tile];
            let (tx, ty) = (tile % bins.tiles_x, tile / bins.tiles_x);
            let mut block = Vec::with_capacity(TILE_SIZE * TILE_SIZE);
            let mut contributions = 0;
            for y in ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(h) {
                for x in tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(w) {
                    let p = [x as f64 + 0.5, y as f64 + 0.5];
                    let (c, t) = composite_pixel(splats, &conics, list, p, |_| contributions += 1);
                    block.push([
                        c[0] + t * bg[0],
                        c[1] + t * bg[1],
                        c[2] + t * bg[2],
                        1.0 - t,
                    ]);
                }
            }
            (block, contributions)
        })
        .collect();
    let mut image = RenderedImage::new(w, h);
    let mut total = 0usize;
    let mut touched = 0usize;
    for (tile, (block, contributions)) in blocks.into_iter().enumerate() {
        total += contributions;
        if !bins.lists[tile].is_empty() {
            touched += 1;
        }
        let (tx, ty) = (tile % bins.tiles_x, tile / bins.tiles_x);
        let x0 = tx * TILE_SIZE;
        let bw = (x0 + TILE_SIZE).min(w) - x0;
        for (k, px) in block.into_iter().enumerate() {
            let (x, y) = (x0 + k % bw, ty * TILE_SIZE + k / bw);
            image.set(x, y, px);
        }
    }
    let stats = RenderStats {
        splats: splats.len(),
        culled: 0,
        skipped_non_pd: skipped,
        tiles_touched: touched,
        avg_splats_per_pixel: total as f64 / (w * h) as f64,
    };
    Ok((image, stats))
}

/// Brute-force rasterizer: every pixel visits every splat in depth order,
/// no tiling.
pub fn rasterize_reference(splats: &[Splat2D], cam: &Camera) -> Result<RenderedImage> {
    check_camera(cam)?;
    let (order, conics, _) = prepare(splats);
    let mut image = RenderedImage::new(cam.width, cam.height);
    let bg = cam.background;
    for y in 0..cam.height {
        for x in 0..cam.width {
            let p = [x as f64 + 0.5, y as f64 + 0.5];
            let (c, t) = composite_pixel(splats, &conics, &order, p, |_| {});
            image.set(x, y, [c[0] + t * bg[0], c[1] + t * bg[1], c[2] + t * bg[2], 1.0 - t]);
        }
    }
    Ok(image)
}

/// Projects and rasterizes a Gaussian set.
pub fn render(set: &GaussianSet, cam: &Camera) -> Result<(RenderedImage, RenderStats)> {
    check_camera(cam)?;
    let projected = project(set, cam);
    let (image, mut stats) = rasterize(&projected.splats, cam)?;
    stats.culled = projected.culled;
    stats.splats = set.len();
    Ok((image, stats))
}

use super::{BodyTemplate, Region};
use crate::error::{Error, Result};

/// Resolution of the single-ownership check run by template validation.
pub const UV_CHECK_RESOLUTION: usize = 256;

const EDGE_EPS: f64 = 1e-9;

/// Face ownership of every texel center of a `resolution²` UV grid.
///
/// Texel `(i, j)` (column, row) has center `((i + 0.5) / res, (j + 0.5) / res)`.
/// A texel is owned by the first face (in face order) whose UV triangle
/// contains its center; points on shared edges go to the lower face index.
#[derive(Debug, Clone)]
pub struct UvRaster {
    pub resolution: usize,
    pub owner: Vec<Option<u32>>,
    pub barycentric: Vec<[f64; 3]>,
}

fn barycentric(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<[f64; 3]> {
    let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    if det.abs() < 1e-18 {
        return None;
    }
    let l0 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
    let l1 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
    Some([l0, l1, 1.0 - l0 - l1])
}

impl UvRaster {
    /// Rasterizes face ids; errors if any texel center lies strictly inside
    /// two faces.
    pub fn build(template: &BodyTemplate, resolution: usize) -> Result<UvRaster> {
        let n = resolution * resolution;
        let mut owner = vec![None; n];
        let mut barycentric_out = vec![[0.0; 3]; n];
        let mut strict = vec![false; n];
        let res = resolution as f64;
        for (f, face) in template.faces.iter().enumerate() {
            let [a, b, c] = face.map(|i| template.uvs[i as usize]);
            let umin = a[0].min(b[0]).min(c[0]);
            let umax = a[0].max(b[0]).max(c[0]);
            let vmin = a[1].min(b[1]).min(c[1]);
            let vmax = a[1].max(b[1]).max(c[1]);
            let i0 = ((umin * res - 0.5).floor().max(0.0)) as usize;
            let i1 = ((umax * res - 0.5).ceil().max(0.0) as usize).min(resolution - 1);
            let j0 = ((vmin * res - 0.5).floor().max(0.0)) as usize;
            let j1 = ((vmax * res - 0.5).ceil().max(0.0) as usize).min(resolution - 1);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let p = [(i as f64 + 0.5) / res, (j as f64 + 0.5) / res];
                    let Some(l) = barycentric(p, a, b, c) else { continue };
                    if l.iter().any(|&x| x < -EDGE_EPS) {
                        continue;
                    }
                    let t = j * resolution + i;
                    if l.iter().all(|&x| x > EDGE_EPS) {
                        if strict[t] {
                            return Err(Error::InvalidTemplate(format!(
                                "faces overlap in UV space at texel ({i}, {j})"
                            )));
                        }
                        strict[t] = true;
                    }
                    if owner[t].is_none() {
                        owner[t] = Some(f as u32);
                        barycentric_out[t] = l.map(|x| x.max(0.0));
                    }
                }
            }
        }
        Ok(UvRaster {
            resolution,
            owner,
            barycentric: barycentric_out,
        })
    }

    pub fn occupancy(&self) -> Vec<bool> {
        self.owner.iter().map(|o| o.is_some()).collect()
    }

    pub fn texel_uv(&self, t: usize) -> [f64; 2] {
        let res = self.resolution as f64;
        [
            ((t % self.resolution) as f64 + 0.5) / res,
            ((t / self.resolution) as f64 + 0.5) / res,
        ]
    }

    /// Region of each texel's owning face.
    pub fn regions(&self, template: &BodyTemplate) -> Vec<Option<Region>> {
        self.owner
            .iter()
            .map(|o| o.map(|f| template.face_region(f as usize)))
            .collect()
    }
}

use crate::body::{BodyTemplate, PosedMesh, Region, UvRaster};
use crate::error::{Error, Result};
use crate::math::{self, Quat, Vec3};

/// Per-texel base Gaussians on the posed surface, in row-major texel order.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseGaussians {
    pub resolution: usize,
    pub positions: Vec<Vec3>,
    pub scales: Vec<Vec3>,
    pub rotations: Vec<Quat>,
    pub uvs: Vec<[f64; 2]>,
    /// Row-major texel index at `resolution`.
    pub texels: Vec<usize>,
    pub regions: Vec<Region>,
}

impl BaseGaussians {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Surface normal of Gaussian `k` (third tangent-frame axis).
    pub fn normal(&self, k: usize) -> Vec3 {
        let m = self.rotations[k].to_mat3();
        [m[0][2], m[1][2], m[2][2]]
    }
}

const NEIGHBORS: usize = 4;
const MIN_SCALE: f64 = 1e-6;

/// One Gaussian per covered texel: surface point by barycentric
/// interpolation, rotation from the (tangent, bitangent, normal) frame and
/// isotropic scale equal to the mean distance to the 4 nearest others.
pub fn build_base_gaussians(
    mesh: &PosedMesh,
    template: &BodyTemplate,
    resolution: usize,
) -> Result<BaseGaussians> {
    if resolution < 8 {
        return Err(Error::invalid(format!("resolution {resolution} is below 8")));
    }
    if mesh.vertices.len() != template.num_vertices() {
        return Err(Error::invalid("posed mesh does not match the template"));
    }
    let raster = UvRaster::build(template, resolution)?;
    let mut positions = Vec::new();
    let mut rotations = Vec::new();
    let mut uvs = Vec::new();
    let mut texels = Vec::new();
    let mut regions = Vec::new();
    for (t, owner) in raster.owner.iter().enumerate() {
        let Some(f) = *owner else { continue };
        let face = template.faces[f as usize];
        let [p0, p1, p2] = face.map(|i| mesh.vertices[i as usize]);
        let [uv0, uv1, uv2] = face.map(|i| template.uvs[i as usize]);
        let l = raster.barycentric[t];
        let pos = math::add(
            math::add(math::scale(p0, l[0]), math::scale(p1, l[1])),
            math::scale(p2, l[2]),
        );
        let e1 = math::sub(p1, p0);
        let e2 = math::sub(p2, p0);
        let n = math::normalize(math::cross(e1, e2));
        let (du1, dv1) = (uv1[0] - uv0[0], uv1[1] - uv0[1]);
        let (du2, dv2) = (uv2[0] - uv0[0], uv2[1] - uv0[1]);
        let det = du1 * dv2 - du2 * dv1;
        let mut tangent = math::scale(math::sub(math::scale(e1, dv2), math::scale(e2, dv1)), 1.0 / det);
        tangent = math::sub(tangent, math::scale(n, math::dot(tangent, n)));
        if math::norm(tangent) < 1e-12 {
            tangent = math::cross(n, if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] });
        }
        let tangent = math::normalize(tangent);
        let bitangent = math::cross(n, tangent);
        let frame = [
            [tangent[0], bitangent[0], n[0]],
            [tangent[1], bitangent[1], n[1]],
            [tangent[2], bitangent[2], n[2]],
        ];
        positions.push(pos);
        rotations.push(Quat::from_mat3(&frame));
        uvs.push(raster.texel_uv(t));
        texels.push(t);
        regions.push(template.face_region(f as usize));
    }
    if positions.is_empty() {
        return Err(Error::InvalidTemplate("UV layout covers no texels".into()));
    }
    let scales = knn_mean_distance(&positions, NEIGHBORS)
        .into_iter()
        .map(|d| {
            let s = d.max(MIN_SCALE);
            [s, s, s]
        })
        .collect();
    Ok(BaseGaussians {
        resolution,
        positions,
        scales,
        rotations,
        uvs,
        texels,
        regions,
    })
}

/// Mean distance from each point to its `k` nearest other points, found
/// with a uniform grid and expanding shells.
pub fn knn_mean_distance(points: &[Vec3], k: usize) -> Vec<f64> {
    let n = points.len();
    if n <= 1 || k == 0 {
        return vec![0.0; n];
    }
    let k = k.min(n - 1);
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max).max(1e-9);
    let cells_per_axis = ((n as f64).cbrt().ceil() as usize).clamp(1, 128);
    let h = extent / cells_per_axis as f64;
    let dims: [usize; 3] = std::array::from_fn(|a| (((hi[a] - lo[a]) / h).floor() as usize + 1).max(1));
    let cell_of = |p: &Vec3| -> [usize; 3] {
        std::array::from_fn(|a| (((p[a] - lo[a]) / h).floor() as usize).min(dims[a] - 1))
    };
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
    for (i, p) in points.iter().enumerate() {
        let c = cell_of(p);
        buckets[(c[2] * dims[1] + c[1]) * dims[0] + c[0]].push(i as u32);
    }
    let max_ring = dims.iter().copied().max().unwrap();
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let c = cell_of(p);
            let mut best: Vec<f64> = Vec::with_capacity(k + 1);
            let mut ring = 0usize;
            loop {
                for z in c[2].saturating_sub(ring)..=(c[2] + ring).min(dims[2] - 1) {
                    for y in c[1].saturating_sub(ring)..=(c[1] + ring).min(dims[1] - 1) {
                        for x in c[0].saturating_sub(ring)..=(c[0] + ring).min(dims[0] - 1) {
                            let on_shell = x.abs_diff(c[0]) == ring
                                || y.abs_diff(c[1]) == ring
                                || z.abs_diff(c[2]) == ring;
                            if !on_shell {
                                continue;
                            }
                            for &j in &buckets[(z * dims[1] + y) * dims[0] + x] {
                                if j as usize == i {
                                    continue;
                                }
                                let d = math::dist(*p, points[j as usize]);
                                if best.len() < k || d < best[k - 1] {
                                    let pos = best.partition_point(|&b| b <= d);
                                    best.insert(pos, d);
                                    best.truncate(k);
                                }
                            }
                        }
                    }
                }
                if (best.len() == k && best[k - 1] <= ring as f64 * h) || ring > max_ring {
                    break;
                }
                ring += 1;
            }
            best.iter().sum::<f64>() / best.len() as f64
        })
        .collect()
}

/// Binary UV-space map, row-major, `1` where the texel belongs to the mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    pub resolution: usize,
    pub data: Vec<u8>,
}

impl RegionMask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn get(&self, col: usize, row: usize) -> bool {
        self.data[row * self.resolution + col] != 0
    }
}

/// Texels owned by `region`'s chart at `resolution`.
pub fn region_mask(template: &BodyTemplate, region: Region, resolution: usize) -> Result<RegionMask> {
    if resolution == 0 {
        return Err(Error::invalid("mask resolution must be positive"));
    }
    let raster = UvRaster::build(template, resolution)?;
    let data = raster
        .regions(template)
        .into_iter()
        .map(|r| u8::from(r == Some(region)))
        .collect();
    Ok(RegionMask { resolution, data })
}

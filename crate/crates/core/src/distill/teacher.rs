use std::path::Path;

use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::gaussians::{AttributeMap, NUM_CHANNELS};
use crate::latent::Latent;

pub const DEFAULT_LATENT_CHANNELS: usize = 8;
pub const DOWNSAMPLE: usize = 4;
pub const MIN_TEACHER_MAPS: usize = 64;
/// Eigenvalues below this fraction of the total variance count as zero.
const RANK_TOLERANCE: f64 = 1e-10;

/// Mean of each `factor × factor` block, texel-major (`C = 14`).
pub fn area_downsample(map: &AttributeMap, factor: usize) -> Result<Vec<f64>> {
    if factor == 0 || map.width % factor != 0 || map.height % factor != 0 {
        return Err(Error::invalid(format!(
            "{}×{} map is not divisible into {factor}×{factor} blocks",
            map.width, map.height
        )));
    }
    let (w, h) = (map.width / factor, map.height / factor);
    let mut out = vec![0.0f64; w * h * NUM_CHANNELS];
    let norm = 1.0 / (factor * factor) as f64;
    for y in 0..map.height {
        for x in 0..map.width {
            let dst = ((y / factor) * w + x / factor) * NUM_CHANNELS;
            for (c, &v) in map.texel(x, y).iter().enumerate() {
                out[dst + c] += v as f64 * norm;
            }
        }
    }
    Ok(out)
}

/// Eigen-decomposition of a symmetric `n × n` matrix by cyclic Jacobi
/// rotations. Returns eigenvalues in descending order and the matching
/// eigenvectors as rows.
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (r, &i) in order.iter().enumerate() {
        // Column i of v, with the largest component made positive.
        let col: Vec<f64> = (0..n).map(|k| v[k * n + i]).collect();
        let big = col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if big < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            vectors[r * n + k] = sign * col[k];
        }
    }
    (values, vectors)
}

/// Frozen per-texel linear encoder: block average, centering, projection
/// onto the leading principal directions and per-channel whitening.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub attr_resolution: usize,
    pub factor: usize,
    pub latent_channels: usize,
    pub mean: Vec<f64>,
    /// `latent_channels × 14`, orthonormal rows.
    pub basis: Vec<f64>,
    /// Latent channel `k` is `scales[k] · basis_k · (x − mean)`.
    pub scales: Vec<f64>,
}

pub fn fit_teacher(maps: &[AttributeMap], latent_channels: usize) -> Result<Teacher> {
    if maps.len() < MIN_TEACHER_MAPS {
        return Err(Error::invalid(format!(
            "teacher fit needs at least {MIN_TEACHER_MAPS} maps, got {}",
            maps.len()
        )));
    }
    if latent_channels == 0 || latent_channels > NUM_CHANNELS {
        return Err(Error::invalid(format!("latent channels must be in 1..={NUM_CHANNELS}")));
    }
    let res = maps[0].width;
    if maps.iter().any(|m| m.width != res || m.height != res) {
        return Err(Error::invalid("teacher maps must share one square resolution"));
    }
    let n = NUM_CHANNELS;
    let mut sum = vec![0.0f64; n];
    let mut count = 0usize;
    let blocks: Vec<Vec<f64>> = maps.iter().map(|m| area_downsample(m, DOWNSAMPLE)).collect::<Result<_>>()?;
    for b in &blocks {
        for texel in b.chunks_exact(n) {
            for (s, v) in sum.iter_mut().zip(texel) {
                *s += v;
            }
            count += 1;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut cov = vec![0.0f64; n * n];
    let mut d = vec![0.0f64; n];
    for b in &blocks {
        for texel in b.chunks_exact(n) {
            for c in 0..n {
                d[c] = texel[c] - mean[c];
            }
            for i in 0..n {
                for j in i..n {
                    cov[i * n + j] += d[i] * d[j];
                }
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            cov[i * n + j] /= count as f64;
            cov[j * n + i] = cov[i * n + j];
        }
    }
    let (values, vectors) = symmetric_eigen(&cov, n);
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let floor = RANK_TOLERANCE * total.max(f64::MIN_POSITIVE);
    if total <= 0.0 || values[latent_channels - 1] <= floor {
        return Err(Error::Fit(format!(
            "texel covariance has rank below {latent_channels} (eigenvalue {:.3e})",
            values[latent_channels - 1]
        )));
    }
    Ok(Teacher {
        attr_resolution: res,
        factor: DOWNSAMPLE,
        latent_channels,
        mean,
        basis: vectors[..latent_channels * n].to_vec(),
        scales: values[..latent_channels].iter().map(|v| 1.0 / v.sqrt()).collect(),
    })
}

impl Teacher {
    pub fn latent_resolution(&self) -> usize {
        self.attr_resolution / self.factor
    }

    pub fn encode(&self, map: &AttributeMap) -> Result<Latent> {
        if map.width != self.attr_resolution || map.height != self.attr_resolution {
            return Err(Error::invalid(format!(
                "teacher expects {0}×{0} maps, got {1}×{2}",
                self.attr_resolution, map.width, map.height
            )));
        }
        let blocks = area_downsample(map, self.factor)?;
        let r = self.latent_resolution();
        let plane = r * r;
        let n = NUM_CHANNELS;
        let mut data = vec![0.0f32; self.latent_channels * plane];
        for (p, texel) in blocks.chunks_exact(n).enumerate() {
            for k in 0..self.latent_channels {
                let row = &self.basis[k * n..(k + 1) * n];
                let z: f64 = (0..n).map(|c| row[c] * (texel[c] - self.mean[c])).sum();
                data[k * plane + p] = (z * self.scales[k]) as f32;
            }
        }
        Latent::from_data(self.latent_channels, r, r, data)
    }

    /// Inverse projection at latent resolution, texel-major 14 channels.
    pub fn unproject(&self, latent: &Latent) -> Result<Vec<f64>> {
        let r = self.latent_resolution();
        if latent.shape() != [self.latent_channels, r, r] {
            return Err(Error::invalid(format!(
                "latent {:?} does not match teacher {:?}",
                latent.shape(),
                [self.latent_channels, r, r]
            )));
        }
        let n = NUM_CHANNELS;
        let plane = r * r;
        let mut out = Vec::with_capacity(plane * n);
        for p in 0..plane {
            let mut x = self.mean.clone();
            for k in 0..self.latent_channels {
                let z = latent.data[k * plane + p] as f64 / self.scales[k];
                for c in 0..n {
                    x[c] += self.basis[k * n + c] * z;
                }
            }
            out.extend(x);
        }
        Ok(out)
    }

    /// `unproject` with every block broadcast back to full resolution.
    pub fn reconstruct(&self, latent: &Latent) -> Result<AttributeMap> {
        let blocks = self.unproject(latent)?;
        let r = self.latent_resolution();
        let res = self.attr_resolution;
        let mut map = AttributeMap::zeros(res, res);
        for y in 0..res {
            for x in 0..res {
                let src = ((y / self.factor) * r + x / self.factor) * NUM_CHANNELS;
                for (c, v) in map.texel_mut(x, y).iter_mut().enumerate() {
                    *v = blocks[src + c] as f32;
                }
            }
        }
        Ok(map)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(b"TPCA", 1);
        w.u32(NUM_CHANNELS as u32);
        w.u32(self.latent_channels as u32);
        w.u32(self.attr_resolution as u32);
        w.u32(self.factor as u32);
        w.f64s(&self.mean);
        w.f64s(&self.basis);
        w.f64s(&self.scales);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Teacher> {
        let (mut r, version) = Reader::open("teacher", bytes, b"TPCA")?;
        if version != 1 {
            return Err(Error::format("teacher", format!("unsupported version {version}")));
        }
        let channels = r.u32()? as usize;
        let latent_channels = r.u32()? as usize;
        let attr_resolution = r.u32()? as usize;
        let factor = r.u32()? as usize;
        if channels != NUM_CHANNELS
            || latent_channels == 0
            || latent_channels > NUM_CHANNELS
            || factor == 0
            || attr_resolution % factor != 0
        {
            return Err(Error::format("teacher", "inconsistent header"));
        }
        let mean = r.f64s(NUM_CHANNELS)?;
        let basis = r.f64s(latent_channels * NUM_CHANNELS)?;
        let scales = r.f64s(latent_channels)?;
        r.expect_end()?;
        if scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::format("teacher", "scale factors must be positive"));
        }
        Ok(Teacher {
            attr_resolution,
            factor,
            latent_channels,
            mean,
            basis,
            scales,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Teacher> {
        Teacher::from_bytes(&binio::read_file(path)?)
    }
}

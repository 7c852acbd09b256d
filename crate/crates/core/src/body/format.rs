//! `TBDY` template files: magic, `u32` version, counts, then arrays in
//! declaration order, all little-endian.

use std::path::Path;

use super::{BodyTemplate, Chart, Joint, Region, SkinWeights, MAX_INFLUENCES};
use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TBDY";
const VERSION: u32 = 1;

impl BodyTemplate {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u32(self.vertices.len() as u32);
        w.u32(self.faces.len() as u32);
        w.u32(self.joints.len() as u32);
        w.u32(self.num_shape as u32);
        w.u32(self.num_expr as u32);
        w.u32(self.charts.len() as u32);
        for v in &self.vertices {
            w.f64s(v);
        }
        for f in &self.faces {
            f.iter().for_each(|&i| w.u32(i));
        }
        for uv in &self.uvs {
            w.f64s(uv);
        }
        for j in &self.joints {
            w.str(&j.name);
            w.i32(j.parent);
            w.f64s(&j.offset);
        }
        for sw in &self.skin {
            for k in 0..MAX_INFLUENCES {
                w.u32(sw.joints[k]);
                w.f64(sw.weights[k]);
            }
        }
        w.f64s(&self.shape_basis);
        w.f64s(&self.expr_basis);
        w.f64s(&self.pose_basis);
        for r in &self.vertex_region {
            w.u32(r.index() as u32);
        }
        for c in &self.charts {
            w.u32(c.region.index() as u32);
            w.f64s(&[c.u0, c.v0, c.u1, c.v1]);
        }
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<BodyTemplate> {
        let (mut r, version) = Reader::open("template", data, MAGIC)?;
        if version != VERSION {
            return Err(Error::format("template", format!("unsupported version {version}")));
        }
        let nv = r.u32()? as usize;
        let nf = r.u32()? as usize;
        let nj = r.u32()? as usize;
        let num_shape = r.u32()? as usize;
        let num_expr = r.u32()? as usize;
        let nc = r.u32()? as usize;
        let region = |i: u32| {
            Region::from_index(i as usize)
                .ok_or_else(|| Error::format("template", format!("bad region id {i}")))
        };
        let vertices = (0..nv)
            .map(|_| Ok([r.f64()?, r.f64()?, r.f64()?]))
            .collect::<Result<Vec<_>>>()?;
        let faces = (0..nf)
            .map(|_| Ok([r.u32()?, r.u32()?, r.u32()?]))
            .collect::<Result<Vec<_>>>()?;
        let uvs = (0..nv)
            .map(|_| Ok([r.f64()?, r.f64()?]))
            .collect::<Result<Vec<_>>>()?;
        let joints = (0..nj)
            .map(|_| {
                Ok(Joint {
                    name: r.str()?,
                    parent: r.i32()?,
                    offset: [r.f64()?, r.f64()?, r.f64()?],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let skin = (0..nv)
            .map(|_| {
                let mut sw = SkinWeights::default();
                for k in 0..MAX_INFLUENCES {
                    sw.joints[k] = r.u32()?;
                    sw.weights[k] = r.f64()?;
                }
                Ok(sw)
            })
            .collect::<Result<Vec<_>>>()?;
        let shape_basis = r.f64s(nv * num_shape * 3)?;
        let expr_basis = r.f64s(nv * num_expr * 3)?;
        let pose_basis = r.f64s(nv * 9 * nj.saturating_sub(1) * 3)?;
        let vertex_region = (0..nv)
            .map(|_| region(r.u32()?))
            .collect::<Result<Vec<_>>>()?;
        let charts = (0..nc)
            .map(|_| {
                Ok(Chart {
                    region: region(r.u32()?)?,
                    u0: r.f64()?,
                    v0: r.f64()?,
                    u1: r.f64()?,
                    v1: r.f64()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        r.expect_end()?;
        let template = BodyTemplate {
            vertices,
            faces,
            uvs,
            joints,
            skin,
            num_shape,
            shape_basis,
            num_expr,
            expr_basis,
            pose_basis,
            vertex_region,
            charts,
        };
        template.validate()?;
        Ok(template)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<BodyTemplate> {
        BodyTemplate::from_bytes(&binio::read_file(path)?)
    }
}

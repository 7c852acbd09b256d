use std::collections::BTreeMap;
use std::path::Path;

use super::params::{Param, ParamStore};
use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TCKP";
const VERSION: u32 = 1;
const DTYPE_F32: u32 = 0;

/// Parameters, optimizer state and string metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub params: ParamStore<f32>,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(params: ParamStore<f32>) -> Self {
        Checkpoint {
            params,
            metadata: BTreeMap::new(),
        }
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::format("checkpoint", format!("missing metadata `{key}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u32(DTYPE_F32);
        w.u64(self.params.step);
        w.u32(self.params.params.len() as u32);
        for (name, p) in &self.params.params {
            w.str(name);
            w.u32(p.shape.len() as u32);
            for &d in &p.shape {
                w.u64(d as u64);
            }
            w.f32s(&p.value);
            w.f32s(&p.m);
            w.f32s(&p.v);
        }
        w.u32(self.metadata.len() as u32);
        for (k, v) in &self.metadata {
            w.str(k);
            w.str(v);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::open("checkpoint", bytes, MAGIC)?;
        if version != VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let dtype = r.u32()?;
        if dtype != DTYPE_F32 {
            return Err(Error::format("checkpoint", format!("unsupported dtype {dtype}")));
        }
        let mut params = ParamStore::new();
        params.step = r.u64()?;
        let count = r.u32()?;
        for _ in 0..count {
            let name = r.str()?;
            let ndim = r.u32()? as usize;
            if ndim > 8 {
                return Err(Error::format("checkpoint", format!("`{name}` has {ndim} dimensions")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n <= bytes.len())
                .ok_or_else(|| Error::format("checkpoint", format!("`{name}` has an impossible shape")))?;
            let value = r.f32s(n)?;
            let m = r.f32s(n)?;
            let v = r.f32s(n)?;
            params.params.insert(name, Param { shape, value, m, v });
        }
        let mut metadata = BTreeMap::new();
        let count = r.u32()?;
        for _ in 0..count {
            let k = r.str()?;
            let v = r.str()?;
            metadata.insert(k, v);
        }
        r.expect_end()?;
        Ok(Checkpoint { params, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&binio::read_file(path)?)
    }
}

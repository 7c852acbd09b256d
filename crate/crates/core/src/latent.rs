//! The structured latent: a low-resolution UV-aligned feature map.

use std::path::Path;

use crate::binio;
use crate::error::{Error, Result};
use crate::gaussians::{decode_float_map, encode_float_map};
use crate::nn::Tensor;

/// Channel-major `C×H×W` latent.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Latent {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Latent {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "latent {channels}×{height}×{width} cannot hold {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("latent contains non-finite values"));
        }
        Ok(Latent {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor {
            shape: [1, self.channels, self.height, self.width],
            data: self.data.clone(),
        }
    }

    /// Stacks latents of equal shape into one batch.
    pub fn batch(latents: &[&Latent]) -> Result<Tensor<f32>> {
        let first = latents.first().ok_or_else(|| Error::invalid("empty latent batch"))?;
        if latents.iter().any(|l| l.shape() != first.shape()) {
            return Err(Error::invalid("latents in a batch must share a shape"));
        }
        let mut data = Vec::with_capacity(latents.len() * first.data.len());
        for l in latents {
            data.extend_from_slice(&l.data);
        }
        Ok(Tensor {
            shape: [latents.len(), first.channels, first.height, first.width],
            data,
        })
    }

    /// Sample `b` of a batch tensor.
    pub fn from_tensor(t: &Tensor<f32>, b: usize) -> Latent {
        let [_, c, h, w] = t.shape;
        Latent {
            channels: c,
            height: h,
            width: w,
            data: t.sample(b).to_vec(),
        }
    }

    /// Serialized as a `TATT` float map (texel-major, `c = channels`).
    pub fn to_bytes(&self) -> Vec<u8> {
        let plane = self.plane();
        let mut hwc = vec![0.0f32; self.data.len()];
        for c in 0..self.channels {
            for p in 0..plane {
                hwc[p * self.channels + c] = self.data[c * plane + p];
            }
        }
        encode_float_map(self.width, self.height, self.channels, &hwc)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (w, h, c, hwc) = decode_float_map(bytes)?;
        let plane = w * h;
        let mut data = vec![0.0f32; hwc.len()];
        for p in 0..plane {
            for ch in 0..c {
                data[ch * plane + p] = hwc[p * c + ch];
            }
        }
        Latent::from_data(c, h, w, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Latent::from_bytes(&binio::read_file(path)?)
    }
}

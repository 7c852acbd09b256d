use super::Real;
use crate::error::{Error, Result};

/// Dense `[batch, channels, height, width]` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: [usize; 4],
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::invalid(format!(
                "tensor of shape {shape:?} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    /// Elements per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.sample_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let [b, _, h, w] = first.shape;
        if parts.iter().any(|p| p.shape[0] != b || p.shape[2] != h || p.shape[3] != w) {
            return Err(Error::invalid("concatenated tensors disagree in batch or spatial size"));
        }
        let c: usize = parts.iter().map(|p| p.shape[1]).sum();
        let mut data = Vec::with_capacity(b * c * h * w);
        for i in 0..b {
            for p in parts {
                data.extend_from_slice(p.sample(i));
            }
        }
        Ok(Tensor {
            shape: [b, c, h, w],
            data,
        })
    }

    /// Channels `start..start + len` of every sample.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        let [b, c, h, w] = self.shape;
        if start + len > c {
            return Err(Error::invalid(format!("channel slice {start}+{len} exceeds {c}")));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(b * len * plane);
        for i in 0..b {
            let s = self.sample(i);
            data.extend_from_slice(&s[start * plane..(start + len) * plane]);
        }
        Ok(Tensor {
            shape: [b, len, h, w],
            data,
        })
    }
}

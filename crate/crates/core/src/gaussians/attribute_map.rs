use std::path::Path;

use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};

/// Channels per texel.
pub const NUM_CHANNELS: usize = 14;

/// Channel layout of an attribute texel.
pub mod channel {
    use std::ops::Range;
    /// Position offset, pre-`tanh`.
    pub const POSITION: Range<usize> = 0..3;
    /// Quaternion offset; channel 3 is unused, 4..7 carry the vector part.
    pub const ROTATION: Range<usize> = 3..7;
    /// Log-scale multipliers.
    pub const SCALE: Range<usize> = 7..10;
    /// Pre-sigmoid RGB.
    pub const COLOR: Range<usize> = 10..13;
    /// Pre-sigmoid opacity.
    pub const OPACITY: usize = 13;
}

/// `height × width × 14` map stored texel-major (`[(row * width + col) * 14 + ch]`).
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl AttributeMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        AttributeMap {
            width,
            height,
            data: vec![0.0; width * height * NUM_CHANNELS],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * NUM_CHANNELS {
            return Err(Error::invalid(format!(
                "attribute data has {} values, expected {}",
                data.len(),
                width * height * NUM_CHANNELS
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("attribute map contains non-finite values"));
        }
        Ok(AttributeMap {
            width,
            height,
            data,
        })
    }

    pub fn texel(&self, col: usize, row: usize) -> &[f32] {
        let i = (row * self.width + col) * NUM_CHANNELS;
        &self.data[i..i + NUM_CHANNELS]
    }

    pub fn texel_mut(&mut self, col: usize, row: usize) -> &mut [f32] {
        let i = (row * self.width + col) * NUM_CHANNELS;
        &mut self.data[i..i + NUM_CHANNELS]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_float_map(self.width, self.height, NUM_CHANNELS, &self.data)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (w, h, c, data) = decode_float_map(bytes)?;
        if c != NUM_CHANNELS {
            return Err(Error::format("attribute map", format!("expected 14 channels, found {c}")));
        }
        AttributeMap::from_data(w, h, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        AttributeMap::from_bytes(&binio::read_file(path)?)
    }
}

const MAGIC: &[u8; 4] = b"TATT";
const VERSION: u32 = 1;

/// `TATT` container: magic, `u32` version, `u32` width/height/channels,
/// then texel-major little-endian `f32` values.
pub fn encode_float_map(width: usize, height: usize, channels: usize, data: &[f32]) -> Vec<u8> {
    assert_eq!(data.len(), width * height * channels);
    let mut w = Writer::new(MAGIC, VERSION);
    w.u32(width as u32);
    w.u32(height as u32);
    w.u32(channels as u32);
    w.f32s(data);
    w.finish()
}

pub fn decode_float_map(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f32>)> {
    let (mut r, version) = Reader::open("attribute map", bytes, MAGIC)?;
    if version != VERSION {
        return Err(Error::format("attribute map", format!("unsupported version {version}")));
    }
    let w = r.u32()? as usize;
    let h = r.u32()? as usize;
    let c = r.u32()? as usize;
    let data = r.f32s(w * h * c)?;
    r.expect_end()?;
    Ok((w, h, c, data))
}

use std::path::Path;

use crate::binio::write_atomic;
use crate::error::{Error, Result};

/// Row-major RGB and alpha planes with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    /// `height × width × 3`.
    pub rgb: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl RenderedImage {
    pub fn new(width: usize, height: usize) -> Self {
        RenderedImage {
            width,
            height,
            rgb: vec![0.0; width * height * 3],
            alpha: vec![0.0; width * height],
        }
    }

    pub(crate) fn set(&mut self, x: usize, y: usize, rgba: [f64; 4]) {
        let i = y * self.width + x;
        for k in 0..3 {
            self.rgb[i * 3 + k] = rgba[k].clamp(0.0, 1.0);
        }
        self.alpha[i] = rgba[3].clamp(0.0, 1.0);
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.rgb.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    /// Writes PNG for a `.png` extension and binary PPM otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        let bytes = if is_png { encode_png(self)? } else { encode_ppm(self) };
        write_atomic(path, &bytes)
    }
}

/// Binary PPM (P6, 8-bit).
pub fn encode_ppm(image: &RenderedImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.to_rgb8());
    out
}

pub fn encode_png(image: &RenderedImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::format("png", e.to_string()))?;
        writer
            .write_image_data(&image.to_rgb8())
            .map_err(|e| Error::format("png", e.to_string()))?;
    }
    Ok(out)
}

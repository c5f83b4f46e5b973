use crate::error::{Error, Result};

/// Channel-major (`C×H×W`) float image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(
                "image",
                format!("{channels}×{height}×{width} needs {} values, got {}", channels * height * width, data.len()),
            ));
        }
        let mut img = Image {
            channels,
            height,
            width,
            data,
        };
        img.clamp();
        Ok(img)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![value.clamp(0.0, 1.0); channels * height * width],
        }
    }

    /// From interleaved row-major `H×W×C` bytes, scaled to `[0, 1]`.
    pub fn from_hwc_u8(height: usize, width: usize, channels: usize, pixels: &[u8]) -> Result<Self> {
        if pixels.len() != height * width * channels {
            return Err(Error::shape(
                "image",
                format!("{height}×{width}×{channels} needs {} bytes, got {}", height * width * channels, pixels.len()),
            ));
        }
        let mut data = vec![0.0; pixels.len()];
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data[(c * height + y) * width + x] = pixels[(y * width + x) * channels + c] as f32 / 255.0;
                }
            }
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    /// Interleaved row-major `H×W×C` bytes, rounding to the nearest level.
    pub fn to_hwc_u8(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.data.len()];
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out[(y * self.width + x) * self.channels + c] = to_level(self.get(c, y, x));
                }
            }
        }
        out
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub(crate) fn clamp(&mut self) {
        for v in &mut self.data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
    }

    /// Largest absolute per-pixel difference.
    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn mean(&self) -> f32 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() as f32 / self.data.len().max(1) as f32
    }
}

pub(crate) fn to_level(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

//! Float images in `[0, 1]` and their 8-bit PNG encoding.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Result, UvaError};

/// Row-major, interleaved `channels`-channel image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width as usize * height as usize * channels],
        }
    }

    pub fn filled(width: u32, height: u32, value: &[f32]) -> Self {
        Self {
            width,
            height,
            channels: value.len(),
            data: value.repeat(width as usize * height as usize),
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels
    }

    pub fn get(&self, x: u32, y: u32) -> &[f32] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels]
    }

    pub fn set(&mut self, x: u32, y: u32, value: &[f32]) {
        let o = self.offset(x, y);
        self.data[o..o + self.channels].copy_from_slice(value);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Mean absolute difference over all channels.
    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(UvaError::Argument("image shapes differ".into()));
        }
        let total: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs() as f64).sum();
        Ok(total / self.data.len().max(1) as f64)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| quantize(*v)).collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_u8();
        let res = match self.channels {
            1 => GrayImage::from_raw(self.width, self.height, bytes)
                .expect("buffer sized from the image")
                .save(path),
            3 => RgbImage::from_raw(self.width, self.height, bytes)
                .expect("buffer sized from the image")
                .save(path),
            c => return Err(UvaError::Argument(format!("cannot write a {c}-channel png"))),
        };
        res.map_err(|source| UvaError::Image {
            path: path.into(),
            source,
        })
    }

    /// Loads a PNG as RGB (`channels = 3`) or grey (`channels = 1`).
    pub fn load_png(path: &Path, channels: usize) -> Result<Self> {
        let img = image::open(path).map_err(|source| UvaError::Image {
            path: path.into(),
            source,
        })?;
        let (width, height, raw) = match channels {
            1 => {
                let g: ImageBuffer<Luma<u8>, Vec<u8>> = img.to_luma8();
                (g.width(), g.height(), g.into_raw())
            }
            3 => {
                let c: ImageBuffer<Rgb<u8>, Vec<u8>> = img.to_rgb8();
                (c.width(), c.height(), c.into_raw())
            }
            c => return Err(UvaError::Argument(format!("cannot read a {c}-channel png"))),
        };
        Ok(Self {
            width,
            height,
            channels,
            data: raw.into_iter().map(|v| v as f32 / 255.0).collect(),
        })
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary mask: true where the single-channel image exceeds one half.
pub fn mask_from_image(img: &Image) -> Vec<bool> {
    img.data.chunks(img.channels).map(|p| p[0] > 0.5).collect()
}

pub fn mask_to_image(mask: &[bool], width: u32, height: u32) -> Image {
    Image {
        width,
        height,
        channels: 1,
        data: mask.iter().map(|m| if *m { 1.0 } else { 0.0 }).collect(),
    }
}

/// Square (Chebyshev) dilation by `radius` pixels.
pub fn dilate_mask(mask: &[bool], width: u32, height: u32, radius: u32) -> Vec<bool> {
    let (w, h, r) = (width as i64, height as i64, radius as i64);
    let mut out = vec![false; mask.len()];
    for y in 0..h {
        for x in 0..w {
            if !mask[(y * w + x) as usize] {
                continue;
            }
            for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                    out[(yy * w + xx) as usize] = true;
                }
            }
        }
    }
    out
}

//! Jet colormap and alpha-blended heatmap overlays, written as 8-bit RGB PNG.

use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ColorType, DynamicImage, ImageEncoder};

use crate::error::{Error, Result};
use crate::gradcam::Cam;

pub const DEFAULT_ALPHA: f64 = 0.4;

/// Row-major 8-bit RGB pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidShape {
                shape: vec![height, width],
                reason: "image extents must be positive",
            });
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} RGB image needs {} bytes, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        Ok(RgbImage {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Base image for an overlay. Grayscale is broadcast to three channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BaseImage {
    Gray {
        height: usize,
        width: usize,
        pixels: Vec<u8>,
    },
    Rgb(RgbImage),
}

impl BaseImage {
    pub fn gray(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} grayscale image with {} bytes",
                pixels.len()
            )));
        }
        Ok(BaseImage::Gray {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        match self {
            BaseImage::Gray { height, .. } => *height,
            BaseImage::Rgb(img) => img.height,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            BaseImage::Gray { width, .. } => *width,
            BaseImage::Rgb(img) => img.width,
        }
    }

    fn channel(&self, pixel: usize, c: usize) -> u8 {
        match self {
            BaseImage::Gray { pixels, .. } => pixels[pixel],
            BaseImage::Rgb(img) => img.pixels[pixel * 3 + c],
        }
    }
}

fn quantize(x: f64) -> u8 {
    (255.0 * x).round() as u8
}

/// Jet color for `v ∈ [0, 1]`: each channel is `clamp(1.5 - |4v - k|, 0, 1)`
/// with `k = 3, 2, 1` for red, green, blue.
pub fn jet(v: f64) -> [u8; 3] {
    let ch = |k: f64| quantize((1.5 - (4.0 * v - k).abs()).clamp(0.0, 1.0));
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// Maps a normalized CAM through [`jet`].
pub fn colorize(cam: &Cam) -> Result<RgbImage> {
    if let Some(v) = cam.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!(
            "cam value {v} outside [0, 1]; normalize before colorizing"
        )));
    }
    let pixels = cam.values().iter().flat_map(|&v| jet(v)).collect();
    RgbImage::new(cam.height(), cam.width(), pixels)
}

/// `round((1 - alpha) · base + alpha · jet(cam))` per channel.
pub fn overlay(base: &BaseImage, cam: &Cam, alpha: f64) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
    }
    if base.height() != cam.height() || base.width() != cam.width() {
        return Err(Error::ShapeMismatch(format!(
            "cam is {}x{} but image is {}x{}; upsample the cam first",
            cam.height(),
            cam.width(),
            base.height(),
            base.width()
        )));
    }
    let heat = colorize(cam)?;
    let mut pixels = Vec::with_capacity(heat.pixels.len());
    for p in 0..cam.height() * cam.width() {
        for c in 0..3 {
            let b = base.channel(p, c) as f64;
            let h = heat.pixels[p * 3 + c] as f64;
            pixels.push(((1.0 - alpha) * b + alpha * h).round() as u8);
        }
    }
    RgbImage::new(cam.height(), cam.width(), pixels)
}

/// Loads a PNG (or any format the `image` crate has been built with).
/// Grayscale sources stay single-channel; everything else becomes RGB.
pub fn read_image(path: impl AsRef<Path>) -> Result<BaseImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => BaseImage::gray(h, w, g.into_raw()),
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            BaseImage::gray(h, w, img.to_luma8().into_raw())
        }
        other => Ok(BaseImage::Rgb(RgbImage::new(h, w, other.to_rgb8().into_raw())?)),
    }
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(
            &img.pixels,
            img.width as u32,
            img.height as u32,
            ColorType::Rgb8.into(),
        )
        .map_err(|source| Error::Image {
            path: "<memory>".into(),
            source,
        })?;
    Ok(out)
}

/// Writes an 8-bit RGB, non-interlaced PNG atomically.
pub fn write_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_png(img)?;
    crate::tensorio::write_atomic(path.as_ref(), &bytes)
}

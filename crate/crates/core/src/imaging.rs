//! Image decoding, ROI cropping, color histograms and the toy embedder.
//!
//! Everything here is a pure function of its inputs.

use std::io::Cursor;

use image::{ImageFormat, ImageReader, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claimstore::NormalizedBBox;

#[derive(Debug, Error, PartialEq)]
pub enum ImagingError {
    #[error("image decode failed at {stage} ({format}): {message}")]
    Decode {
        stage: &'static str,
        format: String,
        message: String,
    },
    #[error("invalid image buffer: {0}")]
    InvalidBuffer(String),
    #[error("region of interest lies outside the {width}x{height} frame")]
    EmptyRoi { width: u32, height: u32 },
    #[error("image is empty")]
    EmptyImage,
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Row-major 8-bit RGB pixels.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidBuffer(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(ImagingError::InvalidBuffer(format!(
                "expected {expected} bytes for {width}x{height} RGB, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Uniform image filled with one color.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, ImagingError> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> [u8; 3],
    ) -> Result<Self, ImagingError> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn into_rgb_image(self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.pixels)
            .expect("buffer length validated at construction")
    }

    pub fn from_rgb_image(img: RgbImage) -> Self {
        let (width, height) = img.dimensions();
        Self {
            width,
            height,
            pixels: img.into_raw(),
        }
    }
}

/// Decodes a PNG or JPEG stream into RGB. Alpha is dropped, gray is expanded.
pub fn decode_image(bytes: &[u8]) -> Result<ImageBuffer, ImagingError> {
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| ImagingError::Decode {
            stage: "format detection",
            format: "unknown".into(),
            message: e.to_string(),
        })?;
    let format = match reader.format() {
        Some(f @ (ImageFormat::Png | ImageFormat::Jpeg)) => f,
        Some(other) => {
            return Err(ImagingError::Decode {
                stage: "format detection",
                format: format!("{other:?}"),
                message: "only PNG and JPEG are accepted".into(),
            })
        }
        None => {
            return Err(ImagingError::Decode {
                stage: "format detection",
                format: "unknown".into(),
                message: "unrecognized magic bytes".into(),
            })
        }
    };
    let format_name = format!("{format:?}").to_lowercase();
    if format == ImageFormat::Jpeg && !has_jpeg_eoi(bytes) {
        // The JPEG decoder pads truncated scans with gray instead of failing.
        return Err(ImagingError::Decode {
            stage: "entropy-coded data",
            format: format_name,
            message: "stream truncated before end-of-image marker".into(),
        });
    }
    let decoded = reader.decode().map_err(|e| ImagingError::Decode {
        stage: "pixel decode",
        format: format_name.clone(),
        message: e.to_string(),
    })?;
    let rgb = decoded.into_rgb8();
    if rgb.width() == 0 || rgb.height() == 0 {
        return Err(ImagingError::Decode {
            stage: "pixel decode",
            format: format_name,
            message: "zero-sized image".into(),
        });
    }
    Ok(ImageBuffer::from_rgb_image(rgb))
}

fn has_jpeg_eoi(bytes: &[u8]) -> bool {
    let trimmed = match bytes.iter().rposition(|&b| b != 0) {
        Some(last) => &bytes[..=last],
        None => return false,
    };
    trimmed.ends_with(&[0xFF, 0xD9])
}

/// Lossless PNG encoding.
pub fn encode_png(image: &ImageBuffer) -> Vec<u8> {
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(
        encoder,
        &image.pixels,
        image.width,
        image.height,
        image::ExtendedColorType::Rgb8,
    )
    .expect("in-memory PNG encoding of a validated buffer cannot fail");
    out
}

/// Pixel-space rectangle; `x..x+width`, `y..y+height`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Converts a normalized box to a clipped pixel rectangle with at least one
/// pixel of extent on each axis.
pub fn pixel_rect(
    bbox: &NormalizedBBox,
    width: u32,
    height: u32,
) -> Result<PixelRect, ImagingError> {
    let (l, t, r, b) = bbox.corners();
    if r <= 0.0 || b <= 0.0 || l >= 1.0 || t >= 1.0 {
        return Err(ImagingError::EmptyRoi { width, height });
    }
    let (x0, x1) = clip_axis(l, r, width);
    let (y0, y1) = clip_axis(t, b, height);
    Ok(PixelRect {
        x: x0,
        y: y0,
        width: x1 - x0,
        height: y1 - y0,
    })
}

fn clip_axis(lo: f64, hi: f64, extent: u32) -> (u32, u32) {
    let n = extent as i64;
    let start = ((lo * extent as f64).round() as i64).clamp(0, n - 1);
    let end = ((hi * extent as f64).round() as i64).min(n).max(start + 1);
    (start as u32, end as u32)
}

pub fn crop_roi(image: &ImageBuffer, bbox: &NormalizedBBox) -> Result<ImageBuffer, ImagingError> {
    let rect = pixel_rect(bbox, image.width, image.height)?;
    crop_rect(image, rect)
}

pub fn crop_rect(image: &ImageBuffer, rect: PixelRect) -> Result<ImageBuffer, ImagingError> {
    if rect.width == 0
        || rect.height == 0
        || rect.x + rect.width > image.width
        || rect.y + rect.height > image.height
    {
        return Err(ImagingError::EmptyRoi {
            width: image.width,
            height: image.height,
        });
    }
    let row_bytes = rect.width as usize * 3;
    let mut pixels = Vec::with_capacity(row_bytes * rect.height as usize);
    for y in rect.y..rect.y + rect.height {
        let start = (y as usize * image.width as usize + rect.x as usize) * 3;
        pixels.extend_from_slice(&image.pixels[start..start + row_bytes]);
    }
    ImageBuffer::new(rect.width, rect.height, pixels)
}

/// Per-channel color histogram, channel-major (R bins, G bins, B bins),
/// each channel L1-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramFeature {
    pub bins_per_channel: usize,
    pub values: Vec<f64>,
}

impl HistogramFeature {
    pub fn channel(&self, c: usize) -> &[f64] {
        let b = self.bins_per_channel;
        &self.values[c * b..(c + 1) * b]
    }
}

/// Bin index for channel value `v` is `floor(v * bins / 256)`.
pub fn color_histogram(image: &ImageBuffer, bins: usize) -> Result<HistogramFeature, ImagingError> {
    if bins == 0 {
        return Err(ImagingError::Config(
            "histogram needs at least one bin".into(),
        ));
    }
    if image.pixels.is_empty() {
        return Err(ImagingError::EmptyImage);
    }
    let mut counts = vec![0u64; 3 * bins];
    for px in image.pixels.chunks_exact(3) {
        for (c, &v) in px.iter().enumerate() {
            counts[c * bins + (v as usize * bins) / 256] += 1;
        }
    }
    let total = (image.pixels.len() / 3) as f64;
    Ok(HistogramFeature {
        bins_per_channel: bins,
        values: counts.into_iter().map(|n| n as f64 / total).collect(),
    })
}

/// Deterministic stand-in for a CNN embedding: luminance average-pooled over
/// a `sqrt(dim) x sqrt(dim)` grid, flattened row-major, L2-normalized.
/// An all-black image maps to the zero vector.
pub fn toy_embed(image: &ImageBuffer, dim: usize) -> Result<Vec<f64>, ImagingError> {
    let grid = (dim as f64).sqrt().round() as usize;
    if dim == 0 || grid * grid != dim {
        return Err(ImagingError::Config(format!(
            "toy embedding dim must be a positive perfect square, got {dim}"
        )));
    }
    let (w, h) = (image.width as usize, image.height as usize);
    let luma: Vec<f64> = image
        .pixels
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    let span = |i: usize, n: usize| {
        let start = i * n / grid;
        let end = ((i + 1) * n / grid).max(start + 1).min(n);
        start..end
    };
    let mut pooled = Vec::with_capacity(dim);
    for gy in 0..grid {
        let rows = span(gy, h);
        for gx in 0..grid {
            let cols = span(gx, w);
            let mut sum = 0.0;
            for y in rows.clone() {
                let row = &luma[y * w..(y + 1) * w];
                sum += row[cols.clone()].iter().sum::<f64>();
            }
            pooled.push(sum / (rows.len() * cols.len()) as f64);
        }
    }
    let norm = pooled.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        pooled.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(pooled)
}

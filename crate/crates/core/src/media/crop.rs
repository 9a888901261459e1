use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FRAME_PIXELS, FRAME_SIZE};
use crate::error::{Error, Result};

/// 8-bit image with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!("{channels} channels; expected 1 or 3")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{} bytes for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// ITU-R BT.601 luma.
    pub fn to_gray(&self) -> Vec<u8> {
        if self.channels == 1 {
            return self.data.clone();
        }
        self.data
            .chunks_exact(3)
            .map(|p| {
                let y = 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32;
                y.round().clamp(0.0, 255.0) as u8
            })
            .collect()
    }
}

/// Mouth bounding box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl BBox {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x: 0,
            y: 0,
            width,
            height,
        }
    }
}

/// A single 96×96 grayscale mouth image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MouthImage(Vec<u8>);

impl MouthImage {
    pub fn new(pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != FRAME_PIXELS {
            return Err(Error::Shape(format!(
                "mouth image needs {FRAME_PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(Self(pixels))
    }

    pub fn pixels(&self) -> &[u8] {
        &self.0
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.0
    }
}

/// Bilinear resampling of a single-channel image, pixel centres at half-integers.
pub fn resize_bilinear(src: &[u8], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<u8> {
    let mut out = vec![0u8; dw * dh];
    let sx = sw as f32 / dw as f32;
    let sy = sh as f32 / dh as f32;
    for oy in 0..dh {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = fy - y0 as f32;
        for ox in 0..dw {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = fx - x0 as f32;
            let p = |x: usize, y: usize| src[y * sw + x] as f32;
            let top = p(x0, y0) * (1.0 - wx) + p(x1, y0) * wx;
            let bottom = p(x0, y1) * (1.0 - wx) + p(x1, y1) * wx;
            out[oy * dw + ox] = (top * (1.0 - wy) + bottom * wy).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Converts `frame` to grayscale and resamples the `bbox` region to 96×96.
pub fn crop_mouth(frame: &Image, bbox: &BBox) -> Result<MouthImage> {
    if bbox.width == 0
        || bbox.height == 0
        || bbox.x + bbox.width > frame.width
        || bbox.y + bbox.height > frame.height
    {
        return Err(Error::Invalid(format!(
            "bbox {bbox:?} outside {}x{} frame",
            frame.width, frame.height
        )));
    }
    let gray = frame.to_gray();
    let mut region = Vec::with_capacity(bbox.width * bbox.height);
    for y in bbox.y..bbox.y + bbox.height {
        let row = y * frame.width;
        region.extend_from_slice(&gray[row + bbox.x..row + bbox.x + bbox.width]);
    }
    MouthImage::new(resize_bilinear(&region, bbox.width, bbox.height, FRAME_SIZE, FRAME_SIZE))
}

/// Loads a PNG or JPEG face image as RGB (or gray when the file is gray).
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let img = image::open(path)?;
    match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            Image::new(w as usize, h as usize, 1, g.into_raw())
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            Image::new(w as usize, h as usize, 3, rgb.into_raw())
        }
    }
}

/// Loads a stored 96×96 mouth image, converting color files to gray.
pub fn load_mouth_image(path: impl AsRef<Path>) -> Result<MouthImage> {
    let path = path.as_ref();
    let img = load_image(path)?;
    if (img.width, img.height) != (FRAME_SIZE, FRAME_SIZE) {
        return Err(Error::Shape(format!(
            "{}: mouth image is {}x{}, expected {FRAME_SIZE}x{FRAME_SIZE}",
            path.display(),
            img.width,
            img.height
        )));
    }
    MouthImage::new(img.to_gray())
}

/// Writes a mouth image as an 8-bit grayscale PNG.
pub fn save_mouth_image(img: &MouthImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf = image::GrayImage::from_raw(FRAME_SIZE as u32, FRAME_SIZE as u32, img.pixels().to_vec())
        .expect("96x96 buffer");
    buf.save(path)?;
    Ok(())
}

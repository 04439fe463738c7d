//! Float RGB images and ordered clips of them.

use std::path::Path;

use image::{ImageBuffer, Rgb as PngRgb};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::CameraId;
use crate::geometry::Rgb;

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(u32, u32, u32, u32),
    #[error("clip has {frames} frames but {timestamps} timestamps")]
    LengthMismatch { frames: usize, timestamps: usize },
    #[error("clip timestamps must be strictly increasing")]
    UnorderedTimestamps,
    #[error("clip is empty")]
    Empty,
    #[error("image file {path}: {reason}")]
    Image { path: String, reason: String },
}

/// `H×W×3` float image with its capture time and source camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderedFrame {
    pub width: u32,
    pub height: u32,
    /// Row-major, RGB interleaved.
    pub pixels: Vec<f64>,
    pub timestamp: f64,
    pub camera_id: CameraId,
    /// Accumulated splat alpha per pixel (`1 − final transmittance`).
    pub alpha: Option<Vec<f64>>,
}

impl RenderedFrame {
    pub fn filled(width: u32, height: u32, rgb: Rgb, timestamp: f64, camera_id: CameraId) -> Self {
        let n = (width * height) as usize;
        let mut pixels = Vec::with_capacity(3 * n);
        for _ in 0..n {
            pixels.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            pixels,
            timestamp,
            camera_id,
            alpha: None,
        }
    }

    pub fn pixel_count(&self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        let i = 3 * (y * self.width + x) as usize;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn same_shape(&self, other: &RenderedFrame) -> Result<(), FrameError> {
        if self.width != other.width || self.height != other.height {
            return Err(FrameError::ShapeMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().all(|v| v.is_finite())
    }

    /// Rounds every channel to the nearest of 65536 levels in `[0, 1]`.
    ///
    /// Quantized frames survive a 16-bit PNG round trip bit-exactly.
    pub fn quantize16(&mut self) {
        for v in &mut self.pixels {
            *v = quantize16(*v);
        }
    }
}

pub fn quantize16(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0
}

/// Writes a 16-bit RGB PNG; values are clamped to `[0, 1]`.
pub fn write_png16(frame: &RenderedFrame, path: &Path) -> Result<(), FrameError> {
    let data: Vec<u16> = frame
        .pixels
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let img: ImageBuffer<PngRgb<u16>, Vec<u16>> = ImageBuffer::from_raw(frame.width, frame.height, data)
        .ok_or_else(|| image_error(path, "pixel buffer does not match dimensions"))?;
    img.save(path).map_err(|e| image_error(path, &e.to_string()))
}

/// Reads a PNG written by [`write_png16`].
pub fn read_png16(path: &Path, timestamp: f64, camera_id: CameraId) -> Result<RenderedFrame, FrameError> {
    let img = image::open(path)
        .map_err(|e| image_error(path, &e.to_string()))?
        .into_rgb16();
    Ok(RenderedFrame {
        width: img.width(),
        height: img.height(),
        pixels: img.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        timestamp,
        camera_id,
        alpha: None,
    })
}

fn image_error(path: &Path, reason: &str) -> FrameError {
    FrameError::Image {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

/// Ordered frames from one camera at strictly increasing times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoClip {
    pub camera_id: CameraId,
    pub frames: Vec<RenderedFrame>,
}

impl VideoClip {
    pub fn new(camera_id: CameraId, frames: Vec<RenderedFrame>) -> Result<Self, FrameError> {
        let clip = Self { camera_id, frames };
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        let first = self.frames.first().ok_or(FrameError::Empty)?;
        for f in &self.frames[1..] {
            first.same_shape(f)?;
        }
        if self.frames.windows(2).any(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(FrameError::UnorderedTimestamps);
        }
        Ok(())
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Width, height, frame count.
    pub fn shape(&self) -> (u32, u32, usize) {
        let (w, h) = self.frames.first().map(|f| (f.width, f.height)).unwrap_or((0, 0));
        (w, h, self.frames.len())
    }

    pub fn same_layout(&self, other: &VideoClip) -> bool {
        self.shape() == other.shape() && self.timestamps() == other.timestamps()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_rejects_unordered_timestamps() {
        let a = RenderedFrame::filled(2, 2, [0.0; 3], 0.1, 0);
        let b = RenderedFrame::filled(2, 2, [0.0; 3], 0.1, 0);
        assert_eq!(
            VideoClip::new(0, vec![a, b]).unwrap_err(),
            FrameError::UnorderedTimestamps
        );
        assert_eq!(VideoClip::new(0, vec![]).unwrap_err(), FrameError::Empty);
    }

    #[test]
    fn png_round_trip_is_exact_after_quantization() {
        let mut f = RenderedFrame::filled(3, 2, [0.1, 0.7, 0.333], 0.5, 4);
        f.pixels[4] = 0.987654321;
        f.quantize16();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        write_png16(&f, &path).unwrap();
        let back = read_png16(&path, 0.5, 4).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn quantize_is_idempotent() {
        for v in [0.0, 1.0, 0.123456789, 0.5, 0.99999] {
            let q = quantize16(v);
            assert_eq!(q, quantize16(q));
            assert_eq!(((q * 65535.0).round() as u16) as f64 / 65535.0, q);
        }
    }
}

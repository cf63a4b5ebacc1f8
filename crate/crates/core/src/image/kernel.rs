use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftDirection;

use super::fft::fft2_plane;
use super::{load_png, Image};
use crate::{Error, Result};

const K2D_MAGIC: &[u8; 4] = b"K2D1";

/// A 2-D filter kernel. The kernel center is `(height / 2, width / 2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel2D {
    height: usize,
    width: usize,
    weights: Vec<f64>,
}

impl Kernel2D {
    pub fn new(height: usize, width: usize, weights: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::range("kernel dimensions must be positive"));
        }
        if weights.len() != height * width {
            return Err(Error::shape(format!(
                "{} weights for a {height}x{width} kernel",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::range("kernel weights must be finite"));
        }
        Ok(Self {
            height,
            width,
            weights,
        })
    }

    /// 1x1 identity kernel.
    pub fn delta() -> Self {
        Self {
            height: 1,
            width: 1,
            weights: vec![1.0],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Rescaled to unit sum. Fails for kernels whose sum is not positive.
    pub fn normalized(&self) -> Result<Self> {
        let s = self.sum();
        if !(s > 0.0) {
            return Err(Error::range(format!("kernel sum {s} is not positive")));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            weights: self.weights.iter().map(|w| w / s).collect(),
        })
    }

    /// Kernel embedded into an `h x w` plane with its center rolled to the
    /// origin, so convolving with a delta kernel is an exact identity.
    pub fn embed(&self, h: usize, w: usize) -> Result<Vec<f64>> {
        if self.height > h || self.width > w {
            return Err(Error::KernelTooLarge {
                kernel_h: self.height,
                kernel_w: self.width,
                image_h: h,
                image_w: w,
            });
        }
        let (cy, cx) = (self.height / 2, self.width / 2);
        let mut plane = vec![0.0; h * w];
        for a in 0..self.height {
            for b in 0..self.width {
                let y = (a + h - cy) % h;
                let x = (b + w - cx) % w;
                plane[y * w + x] += self.get(a, b);
            }
        }
        Ok(plane)
    }

    /// Optical transfer function: the DFT of [`Kernel2D::embed`].
    pub fn otf(&self, h: usize, w: usize) -> Result<Vec<Complex64>> {
        let mut buf: Vec<Complex64> = self
            .embed(h, w)?
            .into_iter()
            .map(|v| Complex64::new(v, 0.0))
            .collect();
        fft2_plane(&mut buf, h, w, FftDirection::Forward);
        Ok(buf)
    }

    /// K2D1 binary encoding: magic, `u32` height, `u32` width (little-endian),
    /// then `height * width` little-endian `f64` weights.
    pub fn to_k2d_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.weights.len());
        out.extend_from_slice(K2D_MAGIC);
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_k2d_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != K2D_MAGIC {
            return Err(Error::UnsupportedFormat("missing K2D1 header".into()));
        }
        let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() != h * w * 8 {
            return Err(Error::UnsupportedFormat(format!(
                "K2D1 body has {} bytes, expected {}",
                body.len(),
                h * w * 8
            )));
        }
        let weights = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(h, w, weights)
    }

    pub fn save_k2d(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_k2d_bytes())?;
        Ok(())
    }

    /// Reads a kernel from a `.png` (grayscale, renormalized to unit sum) or
    /// K2D1 file; the format is chosen by extension.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            let img = load_png(path)?;
            Self::from_image(&img)?.normalized()
        } else {
            Self::from_k2d_bytes(&fs::read(path)?)
        }
    }

    pub fn from_image(img: &Image) -> Result<Self> {
        if img.channels() != 1 {
            return Err(Error::UnsupportedFormat(format!(
                "kernel images must be grayscale, got {} channels",
                img.channels()
            )));
        }
        Self::new(img.height(), img.width(), img.data().to_vec())
    }

    /// Single-channel image of the weights scaled so the peak maps to 1.
    pub fn to_display_image(&self) -> Image {
        let peak = self.weights.iter().cloned().fold(0.0, f64::max);
        let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
        Image::from_fn(1, self.height, self.width, |_, y, x| {
            (self.get(y, x) * scale).clamp(0.0, 1.0)
        })
    }
}

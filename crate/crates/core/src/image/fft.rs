use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use super::{Image, Kernel2D};
use crate::{Error, Result};

/// Per-channel complex spectrum with the same layout as [`Image`].
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "spectrum buffer of {} values for {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
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

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, u: usize, v: usize) -> Complex64 {
        self.data[(c * self.height + u) * self.width + v]
    }
}

/// In-place 2-D DFT of one `height x width` plane. The inverse is unnormalized.
pub(crate) fn fft2_plane(buf: &mut [Complex64], height: usize, width: usize, dir: FftDirection) {
    debug_assert_eq!(buf.len(), height * width);
    let mut planner = FftPlanner::<f64>::new();
    let rows = planner.plan_fft(width, dir);
    rows.process(buf);

    if height > 1 {
        let cols = planner.plan_fft(height, dir);
        let mut t = vec![Complex64::default(); buf.len()];
        transpose(buf, &mut t, height, width);
        cols.process(&mut t);
        transpose(&t, buf, width, height);
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Unnormalized forward DFT of every channel.
pub fn fft2(x: &Image) -> Spectrum {
    let (c, h, w) = x.shape();
    let mut data: Vec<Complex64> = x.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if h * w > 0 {
        for plane in data.chunks_mut(h * w) {
            fft2_plane(plane, h, w, FftDirection::Forward);
        }
    }
    Spectrum {
        channels: c,
        height: h,
        width: w,
        data,
    }
}

/// Normalized inverse DFT that keeps the full complex result.
pub(crate) fn ifft2_complex(s: &Spectrum) -> Vec<Complex64> {
    let (h, w) = (s.height, s.width);
    let mut data = s.data.clone();
    if h * w > 0 {
        let scale = 1.0 / (h * w) as f64;
        for plane in data.chunks_mut(h * w) {
            fft2_plane(plane, h, w, FftDirection::Inverse);
            for v in plane.iter_mut() {
                *v *= scale;
            }
        }
    }
    data
}

/// Normalized inverse DFT; the imaginary part is dropped.
pub fn ifft2(s: &Spectrum) -> Image {
    let data = ifft2_complex(s).into_iter().map(|z| z.re).collect();
    Image::zeros(s.channels, s.height, s.width).with_data(data)
}

/// Like [`ifft2`], but fails when the discarded imaginary part exceeds
/// `rel_tol` of the real part's norm.
pub fn ifft2_checked(s: &Spectrum, rel_tol: f64) -> Result<Image> {
    let full = ifft2_complex(s);
    let re_norm = full.iter().map(|z| z.re * z.re).sum::<f64>().sqrt();
    let im_norm = full.iter().map(|z| z.im * z.im).sum::<f64>().sqrt();
    if im_norm > rel_tol * re_norm.max(f64::MIN_POSITIVE) && im_norm > 1e-300 {
        return Err(Error::NumericalInstability(format!(
            "imaginary residue {im_norm:e} against real norm {re_norm:e}"
        )));
    }
    let data = full.into_iter().map(|z| z.re).collect();
    Ok(Image::zeros(s.channels, s.height, s.width).with_data(data))
}

/// Periodic-boundary convolution with the kernel centered at `floor(taps / 2)`.
pub fn circular_convolve(x: &Image, k: &Kernel2D) -> Result<Image> {
    let (c, h, w) = x.shape();
    let otf = k.otf(h, w)?;
    let mut spec = fft2(x);
    for ch in 0..c {
        for (v, kf) in spec.channel_mut(ch).iter_mut().zip(&otf) {
            *v *= kf;
        }
    }
    Ok(ifft2(&spec))
}

//! Degradation operators `H` and measurement synthesis `y = H(x) + n`.

mod kernels;
mod mask;
mod resize;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::image::{circular_convolve, fft2, ifft2};
use crate::{Error, Image, Kernel2D, Result};

pub use kernels::{bicubic_approx_kernel, gaussian_kernel, motion_kernel};
pub use mask::{BoxSpec, Mask};
pub use resize::{bicubic_resize, cubic, ResizeDirection};

/// Anti-aliasing filter applied before `sf`-fold decimation.
#[derive(Clone, Debug, PartialEq)]
pub enum DownFilter {
    /// Bicubic downscaling (`a = -0.5`, filter widened by `sf`).
    Bicubic,
    /// Circular blur with the kernel, then keep every `sf`-th pixel from the origin.
    Kernel(Kernel2D),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Operator {
    Identity,
    Blur(Kernel2D),
    Inpaint(Mask),
    Downsample { sf: usize, filter: DownFilter },
}

/// A linear degradation operator together with its measurement noise level.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationModel {
    operator: Operator,
    sigma_n: f64,
}

impl DegradationModel {
    pub fn new(operator: Operator, sigma_n: f64) -> Result<Self> {
        if !(sigma_n >= 0.0) || !sigma_n.is_finite() {
            return Err(Error::range(format!("sigma_n must be >= 0, got {sigma_n}")));
        }
        if let Operator::Downsample { sf, .. } = &operator {
            if *sf == 0 {
                return Err(Error::range("scale factor must be >= 1"));
            }
        }
        Ok(Self { operator, sigma_n })
    }

    pub fn identity(sigma_n: f64) -> Result<Self> {
        Self::new(Operator::Identity, sigma_n)
    }

    pub fn operator(&self) -> &Operator {
        &self.operator
    }

    pub fn sigma_n(&self) -> f64 {
        self.sigma_n
    }

    pub fn kind_name(&self) -> &'static str {
        match &self.operator {
            Operator::Identity => "identity",
            Operator::Blur(_) => "blur",
            Operator::Inpaint(_) => "inpaint",
            Operator::Downsample { .. } => "downsample",
        }
    }

    /// Measurement dimensions for a signal of the given dimensions.
    pub fn measurement_shape(&self, shape: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let (c, h, w) = shape;
        match &self.operator {
            Operator::Identity => Ok(shape),
            Operator::Blur(k) => {
                if k.height() > h || k.width() > w {
                    return Err(Error::KernelTooLarge {
                        kernel_h: k.height(),
                        kernel_w: k.width(),
                        image_h: h,
                        image_w: w,
                    });
                }
                Ok(shape)
            }
            Operator::Inpaint(m) => {
                if m.height() != h || m.width() != w {
                    return Err(Error::shape(format!(
                        "mask {}x{} vs image {h}x{w}",
                        m.height(),
                        m.width()
                    )));
                }
                Ok(shape)
            }
            Operator::Downsample { sf, .. } => {
                if h % sf != 0 || w % sf != 0 {
                    return Err(Error::shape(format!(
                        "{h}x{w} not divisible by scale factor {sf}"
                    )));
                }
                Ok((c, h / sf, w / sf))
            }
        }
    }

    /// Signal dimensions that produce a measurement of the given dimensions.
    pub fn signal_shape(&self, y_shape: (usize, usize, usize)) -> (usize, usize, usize) {
        match &self.operator {
            Operator::Downsample { sf, .. } => (y_shape.0, y_shape.1 * sf, y_shape.2 * sf),
            _ => y_shape,
        }
    }

    /// Noise-free `H(x)`.
    pub fn forward(&self, x: &Image) -> Result<Image> {
        self.measurement_shape(x.shape())?;
        match &self.operator {
            Operator::Identity => Ok(x.clone()),
            Operator::Blur(k) => circular_convolve(x, k),
            Operator::Inpaint(m) => m.apply(x),
            Operator::Downsample { sf, filter } => match filter {
                DownFilter::Bicubic => bicubic_resize(x, *sf, ResizeDirection::Down),
                DownFilter::Kernel(k) => Ok(decimate(&circular_convolve(x, k)?, *sf)),
            },
        }
    }

    /// `Hᵀ(y)`.
    pub fn adjoint(&self, y: &Image) -> Result<Image> {
        let x_shape = self.signal_shape(y.shape());
        self.measurement_shape(x_shape)?;
        match &self.operator {
            Operator::Identity => Ok(y.clone()),
            Operator::Blur(k) => circular_correlate(y, k),
            Operator::Inpaint(m) => m.apply(y),
            Operator::Downsample { sf, filter } => match filter {
                DownFilter::Bicubic => Ok(resize::bicubic_adjoint(y, *sf, ResizeDirection::Down)),
                DownFilter::Kernel(k) => circular_correlate(&zero_upsample(y, *sf), k),
            },
        }
    }

    /// Cheap estimate of `x` from `y`, used to seed partially noised starts:
    /// dropped pixels take the per-channel mean of observed ones, blurred
    /// measurements are used as-is, and low-resolution ones are bicubic-upsampled.
    pub fn pseudo_inverse(&self, y: &Image) -> Result<Image> {
        match &self.operator {
            Operator::Identity | Operator::Blur(_) => Ok(y.clone()),
            Operator::Inpaint(m) => {
                m.check_image(y)?;
                let mut out = y.clone();
                let kept = m.kept_count() as f64;
                for c in 0..y.channels() {
                    let ch = out.channel_mut(c);
                    let mean = ch
                        .iter()
                        .zip(m.keep())
                        .filter(|(_, &k)| k)
                        .map(|(v, _)| v)
                        .sum::<f64>()
                        / kept;
                    for (v, &k) in ch.iter_mut().zip(m.keep()) {
                        if !k {
                            *v = mean;
                        }
                    }
                }
                Ok(out)
            }
            Operator::Downsample { sf, .. } => bicubic_resize(y, *sf, ResizeDirection::Up),
        }
    }
}

/// `y = H(x) + sigma_n * n` with i.i.d. standard normal `n`. No clamping.
pub fn apply<R: Rng + ?Sized>(model: &DegradationModel, x: &Image, rng: &mut R) -> Result<Image> {
    let mut y = model.forward(x)?;
    if model.sigma_n > 0.0 {
        for v in y.data_mut() {
            *v += model.sigma_n * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(y)
}

/// Keep pixels `(sf * i, sf * j)`.
pub(crate) fn decimate(x: &Image, sf: usize) -> Image {
    let (c, h, w) = x.shape();
    Image::from_fn(c, h / sf, w / sf, |ch, i, j| x.get(ch, i * sf, j * sf))
}

/// Standard `sf`-fold upsampler: zeros everywhere except `(sf * i, sf * j)`.
pub(crate) fn zero_upsample(y: &Image, sf: usize) -> Image {
    let (c, h, w) = y.shape();
    let mut out = Image::zeros(c, h * sf, w * sf);
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                out.set(ch, i * sf, j * sf, y.get(ch, i, j));
            }
        }
    }
    out
}

/// Adjoint of [`circular_convolve`].
pub(crate) fn circular_correlate(x: &Image, k: &Kernel2D) -> Result<Image> {
    let (c, h, w) = x.shape();
    let otf = k.otf(h, w)?;
    let mut spec = fft2(x);
    for ch in 0..c {
        for (v, kf) in spec.channel_mut(ch).iter_mut().zip(&otf) {
            *v *= kf.conj();
        }
    }
    Ok(ifft2(&spec))
}

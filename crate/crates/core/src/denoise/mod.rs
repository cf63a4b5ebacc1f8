//! Prior subproblem: predicting the clean image `x0` from a noisy state.
//!
//! Every denoiser speaks x0-prediction. Score and noise predictions are
//! converted at the boundary with [`predict_x0_from_score`] and
//! [`eps_from_x0`].

mod external;
mod prior;

use crate::schedule::NoiseSchedule;
use crate::{Error, Image, Result};

pub use external::{
    read_frame, serve_echo, write_frame, Endpoint, ExternalDenoiser, OutputMode, DEFAULT_TIMEOUT,
    FRAME_ERROR, FRAME_REQUEST, FRAME_RESPONSE, MAGIC, PROTOCOL_VERSION,
};
pub use prior::{gaussian_score, gmm_score, GaussianPrior, GmmComponent, GmmPrior, PriorMean};

pub trait Denoiser {
    /// Estimate of `E[x0 | x_t]` at timestep `t`.
    fn predict_x0(&mut self, x_t: &Image, t: usize, schedule: &NoiseSchedule) -> Result<Image>;

    /// Analytic score `∇ log p_t(x_t)`, when one exists.
    fn score(
        &mut self,
        _x_t: &Image,
        _t: usize,
        _schedule: &NoiseSchedule,
    ) -> Option<Result<Image>> {
        None
    }

    /// `Jᵀ v` with `J = ∂x0/∂x_t`, when the denoiser is differentiable in closed form.
    fn x0_vjp(
        &mut self,
        _x_t: &Image,
        _t: usize,
        _schedule: &NoiseSchedule,
        _v: &Image,
    ) -> Result<Image> {
        Err(Error::NonDifferentiableDenoiser)
    }

    /// Whether [`Denoiser::x0_vjp`] is implemented.
    fn has_vjp(&self) -> bool {
        false
    }

    fn name(&self) -> String;
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict_x0(&mut self, x_t: &Image, t: usize, schedule: &NoiseSchedule) -> Result<Image> {
        (**self).predict_x0(x_t, t, schedule)
    }

    fn score(&mut self, x_t: &Image, t: usize, schedule: &NoiseSchedule) -> Option<Result<Image>> {
        (**self).score(x_t, t, schedule)
    }

    fn x0_vjp(
        &mut self,
        x_t: &Image,
        t: usize,
        schedule: &NoiseSchedule,
        v: &Image,
    ) -> Result<Image> {
        (**self).x0_vjp(x_t, t, schedule, v)
    }

    fn has_vjp(&self) -> bool {
        (**self).has_vjp()
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

fn check_alpha_bar(alpha_bar: f64) -> Result<()> {
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(Error::OutOfRange(format!(
            "alpha_bar {alpha_bar} outside (0, 1]"
        )));
    }
    Ok(())
}

/// Tweedie's formula: `x0 = (x_t + (1 − ᾱ) score) / √ᾱ`.
pub fn predict_x0_from_score(x_t: &Image, score: &Image, alpha_bar: f64) -> Result<Image> {
    check_alpha_bar(alpha_bar)?;
    let sa = alpha_bar.sqrt();
    x_t.zip_map(score, |x, s| (x + (1.0 - alpha_bar) * s) / sa)
}

/// `ε = (x_t − √ᾱ x0) / √(1 − ᾱ)`; requires `ᾱ < 1`.
pub fn eps_from_x0(x_t: &Image, x0: &Image, alpha_bar: f64) -> Result<Image> {
    if !(alpha_bar > 0.0 && alpha_bar < 1.0) {
        return Err(Error::OutOfRange(format!(
            "alpha_bar {alpha_bar} outside (0, 1)"
        )));
    }
    let (sa, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x_t.zip_map(x0, |x, x0| (x - sa * x0) / sn)
}

/// `x0 = (x_t − √(1 − ᾱ) ε) / √ᾱ`.
pub fn x0_from_eps(x_t: &Image, eps: &Image, alpha_bar: f64) -> Result<Image> {
    check_alpha_bar(alpha_bar)?;
    let (sa, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x_t.zip_map(eps, |x, e| (x - sn * e) / sa)
}

/// Returns a fixed image regardless of its input.
#[derive(Clone, Debug)]
pub struct OracleDenoiser {
    x_true: Image,
}

impl OracleDenoiser {
    pub fn new(x_true: Image) -> Self {
        Self { x_true }
    }
}

pub fn oracle_denoiser(x_true: Image) -> OracleDenoiser {
    OracleDenoiser::new(x_true)
}

impl Denoiser for OracleDenoiser {
    fn predict_x0(&mut self, x_t: &Image, _t: usize, _schedule: &NoiseSchedule) -> Result<Image> {
        x_t.ensure_same_shape(&self.x_true, "oracle denoiser")?;
        Ok(self.x_true.clone())
    }

    fn x0_vjp(&mut self, x_t: &Image, _t: usize, _s: &NoiseSchedule, v: &Image) -> Result<Image> {
        x_t.ensure_same_shape(v, "oracle vjp")?;
        let (c, h, w) = x_t.shape();
        Ok(Image::zeros(c, h, w))
    }

    fn has_vjp(&self) -> bool {
        true
    }

    fn name(&self) -> String {
        "oracle".into()
    }
}

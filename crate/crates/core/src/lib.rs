//! Plug-and-play diffusion sampling for image restoration.
//!
//! The sampler alternates two subproblems at every reverse-diffusion step:
//! a denoiser predicts the clean image from the noisy state (prior step) and a
//! closed-form proximal operator pulls that prediction toward the measurement
//! (data step). Noise is then re-injected to reach the next timestep.
//!
//! Modules, bottom-up:
//!
//! - [`image`]: image tensors, 2-D FFT, circular convolution, PNG and kernel I/O, PSNR.
//! - [`schedule`]: linear noise schedules and sampling step plans.
//! - [`degrade`]: degradation operators (blur, mask, downsampling) and measurement synthesis.
//! - [`prox`]: data-subproblem solvers for each operator family.
//! - [`denoise`]: the denoiser contract, analytic priors, an oracle and the external bridge client.
//! - [`sample`]: DiffPIR, DDPM, DDIM and DPS sampling loops.
//! - [`oracle`]: dense reference solvers used by the test suites.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod degrade;
pub mod denoise;
mod error;
pub mod image;
pub mod oracle;
pub mod prox;
pub mod sample;
pub mod schedule;

pub use error::{Error, Result};
pub use image::{psnr, Image, Kernel2D, Psnr, Spectrum};

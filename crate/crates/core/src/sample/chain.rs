//! Unconditional reverse steps and the gradient-guided baselines.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{initial_state, Counting, SamplerConfig, StepImages, StepRecord, Trajectory};
use crate::degrade::DegradationModel;
use crate::denoise::{eps_from_x0, Denoiser};
use crate::schedule::{effective_sigma, NoiseSchedule, StepPlan};
use crate::{Error, Image, Result};

/// Variance of the noise added by an ancestral reverse step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DdpmVariance {
    /// `β_t`.
    #[default]
    Beta,
    /// `β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`.
    Posterior,
}

fn ddpm_std(s: &NoiseSchedule, t: usize, variance: DdpmVariance) -> Result<f64> {
    let beta = s.beta(t)?;
    Ok(match variance {
        DdpmVariance::Beta => beta.sqrt(),
        DdpmVariance::Posterior => {
            (beta * (1.0 - s.alpha_bar(t - 1)?) / (1.0 - s.alpha_bar(t)?)).sqrt()
        }
    })
}

fn draw(shape: (usize, usize, usize), rng: &mut (impl Rng + ?Sized)) -> Image {
    Image::standard_normal(shape.0, shape.1, shape.2, rng)
}

/// `x_{t−1} = (x_t − β_t / √(1 − ᾱ_t) ε) / √α_t + std · noise`.
pub fn ddpm_update(
    x_t: &Image,
    eps: &Image,
    t: usize,
    s: &NoiseSchedule,
    variance: DdpmVariance,
    noise: Option<&Image>,
) -> Result<Image> {
    let beta = s.beta(t)?;
    let alpha = s.alpha(t)?;
    let c = beta / (1.0 - s.alpha_bar(t)?).sqrt();
    let ra = alpha.sqrt();
    let mut out = x_t.zip_map(eps, |x, e| (x - c * e) / ra)?;
    if let Some(n) = noise {
        out.add_scaled(n, ddpm_std(s, t, variance)?)?;
    }
    Ok(out)
}

/// HQS prior step with the first-order proximal update, keeping terms to
/// first order in `β_t`: `(x_t + β_t score) / √α_t + √β_t noise`.
pub fn hqs_prior_step(
    x_t: &Image,
    score: &Image,
    t: usize,
    s: &NoiseSchedule,
    noise: &Image,
) -> Result<Image> {
    let beta = s.beta(t)?;
    let ra = s.alpha(t)?.sqrt();
    let rb = beta.sqrt();
    let z = x_t.zip_map(score, |x, sc| (x + beta * sc) / ra)?;
    z.zip_map(noise, |z, n| z + rb * n)
}

/// Reverse step returning `(x_{t−1}, x0)`.
fn ddpm_inner<R: Rng + ?Sized>(
    x_t: &Image,
    t: usize,
    denoiser: &mut dyn Denoiser,
    s: &NoiseSchedule,
    variance: DdpmVariance,
    rng: &mut R,
) -> Result<(Image, Image)> {
    if t == 0 {
        return Err(Error::OutOfRange("reverse step needs t >= 1".into()));
    }
    let ab = s.alpha_bar(t)?;
    let x0 = denoiser.predict_x0(x_t, t, s)?;
    let eps = eps_from_x0(x_t, &x0, ab)?;
    let noise = (ddpm_std(s, t, variance)? > 0.0).then(|| draw(x_t.shape(), rng));
    Ok((ddpm_update(x_t, &eps, t, s, variance, noise.as_ref())?, x0))
}

/// Ancestral reverse step with the denoiser used as a noise predictor.
pub fn ddpm_reverse_step<R: Rng + ?Sized>(
    x_t: &Image,
    t: usize,
    denoiser: &mut dyn Denoiser,
    s: &NoiseSchedule,
    variance: DdpmVariance,
    rng: &mut R,
) -> Result<Image> {
    Ok(ddpm_inner(x_t, t, denoiser, s, variance, rng)?.0)
}

/// `σ = η √((1 − ᾱ_prev) / (1 − ᾱ_t)) √(1 − ᾱ_t / ᾱ_prev)`.
pub fn ddim_sigma(s: &NoiseSchedule, t: usize, t_prev: usize, eta: f64) -> Result<f64> {
    let ab = s.alpha_bar(t)?;
    let ap = s.alpha_bar(t_prev)?;
    Ok(eta * ((1.0 - ap) / (1.0 - ab)).sqrt() * (1.0 - ab / ap).max(0.0).sqrt())
}

/// `√ᾱ_prev x0 + √(1 − ᾱ_prev − σ²) ε + σ noise`.
#[allow(clippy::too_many_arguments)]
pub fn ddim_update(
    x0: &Image,
    eps: &Image,
    s: &NoiseSchedule,
    t: usize,
    t_prev: usize,
    eta: f64,
    noise: Option<&Image>,
) -> Result<Image> {
    let ap = s.alpha_bar(t_prev)?;
    let sigma = ddim_sigma(s, t, t_prev, eta)?;
    let dir = (1.0 - ap - sigma * sigma).max(0.0).sqrt();
    let sp = ap.sqrt();
    let mut out = x0.zip_map(eps, |x, e| sp * x + dir * e)?;
    if let Some(n) = noise {
        out.add_scaled(n, sigma)?;
    }
    Ok(out)
}

pub fn ddim_step<R: Rng + ?Sized>(
    x_t: &Image,
    t: usize,
    t_prev: usize,
    denoiser: &mut dyn Denoiser,
    s: &NoiseSchedule,
    eta: f64,
    rng: &mut R,
) -> Result<Image> {
    if t_prev >= t {
        return Err(Error::OutOfRange(format!(
            "need t ({t}) > t_prev ({t_prev})"
        )));
    }
    let x0 = denoiser.predict_x0(x_t, t, s)?;
    let eps = eps_from_x0(x_t, &x0, s.alpha_bar(t)?)?;
    let noise = (ddim_sigma(s, t, t_prev, eta)? > 0.0).then(|| draw(x_t.shape(), rng));
    ddim_update(&x0, &eps, s, t, t_prev, eta, noise.as_ref())
}

/// `σ_t² / (λ σ_n²)`, the weight on `Hᵀ(y − H z)` in the guided steps.
fn guidance_weight(
    s: &NoiseSchedule,
    t: usize,
    model: &DegradationModel,
    cfg: &SamplerConfig,
) -> Result<f64> {
    let st = s.sigma_step(t)?;
    let sn = effective_sigma(model.sigma_n(), cfg.sigma_floor);
    Ok(st * st / (cfg.lambda * sn * sn))
}

#[allow(clippy::too_many_arguments)]
fn dps_yt_inner<R: Rng + ?Sized>(
    x_t: &Image,
    t: usize,
    denoiser: &mut dyn Denoiser,
    model: &DegradationModel,
    y: &Image,
    s: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(Image, Image)> {
    let (z, x0) = ddpm_inner(x_t, t, denoiser, s, cfg.ddpm_variance, rng)?;
    let ap = s.alpha_bar(t - 1)?;
    let mut y_prev = y.scaled(ap.sqrt());
    if ap < 1.0 {
        y_prev.add_scaled(&draw(y.shape(), rng), (1.0 - ap).sqrt())?;
    }
    let r = y_prev.sub(&model.forward(&z)?)?;
    let mut x = z;
    x.add_scaled(&model.adjoint(&r)?, guidance_weight(s, t, model, cfg)?)?;
    Ok((x, x0))
}

/// Reverse step followed by a gradient step towards the measurement
/// re-noised to level `t − 1`.
#[allow(clippy::too_many_arguments)]
pub fn dps_yt_step<R: Rng + ?Sized>(
    x_t: &Image,
    t: usize,
    denoiser: &mut dyn Denoiser,
    model: &DegradationModel,
    y: &Image,
    s: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Image> {
    Ok(dps_yt_inner(x_t, t, denoiser, model, y, s, cfg, rng)?.0)
}

#[allow(clippy::too_many_arguments)]
fn dps_y0_inner<R: Rng + ?Sized>(
    x_t: &Image,
    t: usize,
    denoiser: &mut dyn Denoiser,
    model: &DegradationModel,
    y: &Image,
    s: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(Image, Image)> {
    if !denoiser.has_vjp() && !cfg.fd_fallback {
        return Err(Error::NonDifferentiableDenoiser);
    }
    let (z, x0_t) = ddpm_inner(x_t, t, denoiser, s, cfg.ddpm_variance, rng)?;
    let tp = t - 1;
    // at t − 1 = 0 the clean estimate is z itself
    let x0 = if tp == 0 {
        z.clone()
    } else {
        denoiser.predict_x0(&z, tp, s)?
    };
    let dir = model.adjoint(&y.sub(&model.forward(&x0)?)?)?;
    let grad = if tp == 0 {
        dir
    } else if denoiser.has_vjp() {
        denoiser.x0_vjp(&z, tp, s, &dir)?
    } else {
        // Jᵀ d = J d for the symmetric Jacobian of a posterior-mean denoiser
        let norm = dir.norm();
        if norm == 0.0 {
            dir
        } else {
            let h = cfg.fd_step;
            let u = dir.scaled(1.0 / norm);
            let mut zp = z.clone();
            zp.add_scaled(&u, h)?;
            let mut zm = z.clone();
            zm.add_scaled(&u, -h)?;
            let fp = denoiser.predict_x0(&zp, tp, s)?;
            let fm = denoiser.predict_x0(&zm, tp, s)?;
            fp.sub(&fm)?.scaled(norm / (2.0 * h))
        }
    };
    let mut x = z;
    x.add_scaled(&grad, guidance_weight(s, t, model, cfg)?)?;
    Ok((x, x0_t))
}

/// Reverse step followed by a gradient step on `‖y − H(x0(z))‖²`, with the
/// gradient taken through the denoiser at `t − 1`.
#[allow(clippy::too_many_arguments)]
pub fn dps_y0_step<R: Rng + ?Sized>(
    x_t: &Image,
    t: usize,
    denoiser: &mut dyn Denoiser,
    model: &DegradationModel,
    y: &Image,
    s: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Image> {
    Ok(dps_y0_inner(x_t, t, denoiser, model, y, s, cfg, rng)?.0)
}

/// Unconditional ancestral sampling from `N(0, I)` at `t_start` down to 0.
pub fn run_ddpm<R: Rng + ?Sized>(
    shape: (usize, usize, usize),
    denoiser: &mut dyn Denoiser,
    s: &NoiseSchedule,
    t_start: usize,
    variance: DdpmVariance,
    rng: &mut R,
) -> Result<(Image, Trajectory)> {
    if t_start == 0 || t_start > s.n_train() {
        return Err(Error::OutOfRange(format!(
            "t_start {t_start} outside the schedule"
        )));
    }
    let mut counted = Counting::new(denoiser);
    let mut x = draw(shape, rng);
    let mut records = Vec::with_capacity(t_start);
    for t in (1..=t_start).rev() {
        x = ddpm_reverse_step(&x, t, &mut counted, s, variance, rng)?;
        records.push(StepRecord {
            t,
            t_prev: t - 1,
            residual: None,
            images: None,
        });
    }
    let nfe = counted.calls();
    Ok((x, Trajectory { records, nfe }))
}

/// Unconditional DDIM sampling over `plan` from `N(0, I)`.
pub fn run_ddim<R: Rng + ?Sized>(
    shape: (usize, usize, usize),
    denoiser: &mut dyn Denoiser,
    s: &NoiseSchedule,
    plan: &StepPlan,
    eta: f64,
    rng: &mut R,
) -> Result<(Image, Trajectory)> {
    plan.ensure_within(s)?;
    let mut counted = Counting::new(denoiser);
    let mut x = draw(shape, rng);
    let mut records = Vec::with_capacity(plan.len());
    for (t, t_prev) in plan.transitions() {
        x = ddim_step(&x, t, t_prev, &mut counted, s, eta, rng)?;
        records.push(StepRecord {
            t,
            t_prev,
            residual: None,
            images: None,
        });
    }
    let nfe = counted.calls();
    Ok((x, Trajectory { records, nfe }))
}

/// Runs DPS-yt or DPS-y0 (per `cfg.kind`) over every timestep from `t_start`.
pub fn run_dps<R: Rng + ?Sized>(
    y: &Image,
    model: &DegradationModel,
    denoiser: &mut dyn Denoiser,
    s: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(Image, Trajectory)> {
    use super::SamplerKind;
    cfg.validate(s)?;
    let use_y0 = match cfg.kind {
        SamplerKind::DpsY0 => true,
        SamplerKind::DpsYt => false,
        other => {
            return Err(Error::InvalidConfig(format!(
                "{other} is not a DPS sampler"
            )))
        }
    };
    if use_y0 && !denoiser.has_vjp() && !cfg.fd_fallback {
        return Err(Error::NonDifferentiableDenoiser);
    }
    let mut counted = Counting::new(denoiser);
    let mut x = initial_state(y, model, s, cfg.t_start, rng)?;
    let mut records = Vec::with_capacity(cfg.t_start);
    for t in (1..=cfg.t_start).rev() {
        let (next, x0) = if use_y0 {
            dps_y0_inner(&x, t, &mut counted, model, y, s, cfg, rng)?
        } else {
            dps_yt_inner(&x, t, &mut counted, model, y, s, cfg, rng)?
        };
        records.push(StepRecord {
            t,
            t_prev: t - 1,
            residual: Some(y.sub(&model.forward(&x0)?)?.norm()),
            images: cfg.record.then(|| StepImages {
                x_t: x.clone(),
                x0: x0.clone(),
                x0_hat: next.clone(),
            }),
        });
        x = next;
    }
    let nfe = counted.calls();
    Ok((x, Trajectory { records, nfe }))
}

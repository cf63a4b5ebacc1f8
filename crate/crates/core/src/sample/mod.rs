//! Sampling loops: the HQS-split plug-and-play sampler, unconditional
//! DDPM/DDIM, and the two gradient-guided baselines.
//!
//! Random draws follow a fixed order: the initial state first, then the
//! per-step noise in visiting order. A step draws only when its noise
//! coefficient is nonzero.

mod chain;
mod trajectory;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degrade::DegradationModel;
use crate::denoise::Denoiser;
use crate::prox::{self, ProxOptions};
use crate::schedule::{quadratic_subsequence, NoiseSchedule, StepPlan, DEFAULT_SIGMA_FLOOR};
use crate::{Error, Image, Result};

pub use chain::{
    ddim_sigma, ddim_step, ddim_update, ddpm_reverse_step, ddpm_update, dps_y0_step, dps_yt_step,
    hqs_prior_step, run_ddim, run_ddpm, run_dps, DdpmVariance,
};
pub use trajectory::{StepImages, StepRecord, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplerKind {
    #[serde(rename = "diffpir")]
    DiffPir,
    #[serde(rename = "ddpm")]
    Ddpm,
    #[serde(rename = "ddim")]
    Ddim,
    #[serde(rename = "dps-yt")]
    DpsYt,
    #[serde(rename = "dps-y0")]
    DpsY0,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 5] = [
        SamplerKind::DiffPir,
        SamplerKind::Ddpm,
        SamplerKind::Ddim,
        SamplerKind::DpsYt,
        SamplerKind::DpsY0,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::DiffPir => "diffpir",
            SamplerKind::Ddpm => "ddpm",
            SamplerKind::Ddim => "ddim",
            SamplerKind::DpsYt => "dps-yt",
            SamplerKind::DpsY0 => "dps-y0",
        }
    }

    /// Samplers that visit every timestep from `t_start` down to 1.
    pub fn is_chain(self) -> bool {
        matches!(
            self,
            SamplerKind::Ddpm | SamplerKind::DpsYt | SamplerKind::DpsY0
        )
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SamplerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown sampler {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Guidance weight `λ`.
    pub lambda: f64,
    /// Fraction of fresh noise injected per step, in `[0, 1]`.
    pub zeta: f64,
    /// DDIM stochasticity, in `[0, 1]`.
    pub eta: f64,
    /// Number of visited timesteps for the skipping samplers. Chain samplers
    /// always take `t_start` steps.
    pub steps: usize,
    pub t_start: usize,
    pub seed: u64,
    /// Lower bound on `σ_n` inside `ρ_t`.
    pub sigma_floor: f64,
    pub prox: ProxOptions,
    pub ddpm_variance: DdpmVariance,
    /// Use central differences for the DPS-y0 gradient when the denoiser has
    /// no analytic Jacobian.
    pub fd_fallback: bool,
    pub fd_step: f64,
    /// Keep per-step images in the trajectory.
    pub record: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::DiffPir,
            lambda: 7.0,
            zeta: 0.3,
            eta: 0.0,
            steps: 100,
            t_start: 1000,
            seed: 0,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            prox: ProxOptions::default(),
            ddpm_variance: DdpmVariance::Beta,
            fd_fallback: true,
            fd_step: 1e-3,
            record: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return bad(format!("zeta must lie in [0, 1], got {}", self.zeta));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta must lie in [0, 1], got {}", self.eta));
        }
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if self.t_start == 0 || self.t_start > schedule.n_train() {
            return bad(format!(
                "t_start must lie in 1..={}, got {}",
                schedule.n_train(),
                self.t_start
            ));
        }
        if !self.kind.is_chain() && self.steps > self.t_start {
            return bad(format!(
                "steps ({}) cannot exceed t_start ({})",
                self.steps, self.t_start
            ));
        }
        if !(self.sigma_floor > 0.0) {
            return bad("sigma_floor must be positive".into());
        }
        if !(self.fd_step > 0.0) {
            return bad("fd_step must be positive".into());
        }
        if !(self.prox.ibp_gamma >= 0.0) {
            return bad("ibp_gamma must be >= 0".into());
        }
        Ok(())
    }

    /// Timesteps visited by the configured sampler.
    pub fn plan(&self, schedule: &NoiseSchedule) -> Result<StepPlan> {
        self.validate(schedule)?;
        if self.kind.is_chain() {
            StepPlan::full(self.t_start)
        } else {
            quadratic_subsequence(schedule.n_train(), self.steps, self.t_start)
        }
    }
}

/// Wraps a denoiser and counts `predict_x0` calls.
pub struct Counting<'a> {
    inner: &'a mut dyn Denoiser,
    calls: usize,
}

impl<'a> Counting<'a> {
    pub fn new(inner: &'a mut dyn Denoiser) -> Self {
        Self { inner, calls: 0 }
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl Denoiser for Counting<'_> {
    fn predict_x0(&mut self, x_t: &Image, t: usize, s: &NoiseSchedule) -> Result<Image> {
        self.calls += 1;
        let x0 = self.inner.predict_x0(x_t, t, s)?;
        if x0.shape() != x_t.shape() {
            return Err(Error::shape(format!(
                "denoiser returned {:?} for input {:?}",
                x0.shape(),
                x_t.shape()
            )));
        }
        if !x0.is_finite() {
            return Err(Error::NumericalInstability(format!(
                "denoiser produced non-finite values at t={t}"
            )));
        }
        Ok(x0)
    }

    fn score(&mut self, x_t: &Image, t: usize, s: &NoiseSchedule) -> Option<Result<Image>> {
        self.inner.score(x_t, t, s)
    }

    fn x0_vjp(&mut self, x_t: &Image, t: usize, s: &NoiseSchedule, v: &Image) -> Result<Image> {
        self.inner.x0_vjp(x_t, t, s, v)
    }

    fn has_vjp(&self) -> bool {
        self.inner.has_vjp()
    }

    fn name(&self) -> String {
        self.inner.name()
    }
}

/// `x_t = √ᾱ_t x0 + √(1 − ᾱ_t) ε` with the given noise.
pub fn forward_diffuse_with(x0: &Image, t: usize, s: &NoiseSchedule, eps: &Image) -> Result<Image> {
    let ab = s.alpha_bar(t)?;
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(eps, |x, e| sa * x + sn * e)
}

/// `x_t = √ᾱ_t x0 + √(1 − ᾱ_t) ε` with fresh `ε ~ N(0, I)`.
pub fn forward_diffuse<R: Rng + ?Sized>(
    x0: &Image,
    t: usize,
    s: &NoiseSchedule,
    rng: &mut R,
) -> Result<Image> {
    s.alpha_bar(t)?;
    let (c, h, w) = x0.shape();
    let eps = Image::standard_normal(c, h, w, rng);
    forward_diffuse_with(x0, t, s, &eps)
}

/// Intermediate quantities of one plug-and-play step.
#[derive(Clone, Debug)]
pub struct DiffPirStep {
    pub x_prev: Image,
    pub x0: Image,
    pub x0_hat: Image,
    pub eps_hat: Image,
}

/// One plug-and-play step from `t` to `t_prev`:
/// denoise, solve the data subproblem with weight `ρ_t`, recover the implied
/// noise `ε̂`, and re-noise to `t_prev` mixing `ε̂` with fresh noise by `ζ`.
#[allow(clippy::too_many_arguments)]
pub fn diffpir_step<R: Rng + ?Sized>(
    x_t: &Image,
    t: usize,
    t_prev: usize,
    denoiser: &mut dyn Denoiser,
    model: &DegradationModel,
    y: &Image,
    s: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<DiffPirStep> {
    if t_prev >= t {
        return Err(Error::OutOfRange(format!(
            "need t ({t}) > t_prev ({t_prev})"
        )));
    }
    let ab = s.alpha_bar(t)?;
    let ab_prev = s.alpha_bar(t_prev)?;
    let rho = s.rho_with_floor(t, cfg.lambda, model.sigma_n(), cfg.sigma_floor)?;

    let x0 = denoiser.predict_x0(x_t, t, s)?;
    let x0_hat = prox::solve(model, y, &x0, rho, &cfg.prox)?;
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let eps_hat = x_t.zip_map(&x0_hat, |x, x0| (x - sa * x0) / sn)?;

    let x_prev = if t_prev == 0 {
        x0_hat.clone()
    } else {
        let (sp, np) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
        let (keep, fresh) = ((1.0 - cfg.zeta).sqrt(), cfg.zeta.sqrt());
        let mut out = x0_hat.zip_map(&eps_hat, |x0, e| sp * x0 + np * keep * e)?;
        if fresh > 0.0 {
            let (c, h, w) = x_t.shape();
            out.add_scaled(&Image::standard_normal(c, h, w, rng), np * fresh)?;
        }
        out
    };
    Ok(DiffPirStep {
        x_prev,
        x0,
        x0_hat,
        eps_hat,
    })
}

fn residual(model: &DegradationModel, y: &Image, x: &Image) -> Result<f64> {
    Ok(y.sub(&model.forward(x)?)?.norm())
}

/// Initial state: pure noise at `t_start == N`, otherwise the forward-diffused
/// pseudo-inverse of `y`.
pub fn initial_state<R: Rng + ?Sized>(
    y: &Image,
    model: &DegradationModel,
    s: &NoiseSchedule,
    t_start: usize,
    rng: &mut R,
) -> Result<Image> {
    let (c, h, w) = model.signal_shape(y.shape());
    if model.measurement_shape((c, h, w))? != y.shape() {
        return Err(Error::shape("measurement does not match the operator"));
    }
    if t_start >= s.n_train() {
        Ok(Image::standard_normal(c, h, w, rng))
    } else {
        forward_diffuse(&model.pseudo_inverse(y)?, t_start, s, rng)
    }
}

/// Runs the plug-and-play sampler over `plan`.
#[allow(clippy::too_many_arguments)]
pub fn run_diffpir<R: Rng + ?Sized>(
    y: &Image,
    model: &DegradationModel,
    denoiser: &mut dyn Denoiser,
    s: &NoiseSchedule,
    plan: &StepPlan,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(Image, Trajectory)> {
    plan.ensure_within(s)?;
    let mut counted = Counting::new(denoiser);
    let mut x = initial_state(y, model, s, plan.t_start(), rng)?;
    let mut records = Vec::with_capacity(plan.len());
    for (t, t_prev) in plan.transitions() {
        let step = diffpir_step(&x, t, t_prev, &mut counted, model, y, s, cfg, rng)?;
        records.push(StepRecord {
            t,
            t_prev,
            residual: Some(residual(model, y, &step.x0_hat)?),
            images: cfg.record.then(|| StepImages {
                x_t: x.clone(),
                x0: step.x0.clone(),
                x0_hat: step.x0_hat.clone(),
            }),
        });
        x = step.x_prev;
    }
    let nfe = counted.calls();
    Ok((x, Trajectory { records, nfe }))
}

/// Runs the configured sampler with an RNG seeded from `cfg.seed`.
/// Unconditional samplers use `y` and `model` only for the output shape.
pub fn run(
    y: &Image,
    model: &DegradationModel,
    denoiser: &mut dyn Denoiser,
    s: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<(Image, Trajectory)> {
    let plan = cfg.plan(s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match cfg.kind {
        SamplerKind::DiffPir => run_diffpir(y, model, denoiser, s, &plan, cfg, &mut rng),
        SamplerKind::Ddpm => {
            let shape = model.signal_shape(y.shape());
            run_ddpm(shape, denoiser, s, cfg.t_start, cfg.ddpm_variance, &mut rng)
        }
        SamplerKind::Ddim => {
            let shape = model.signal_shape(y.shape());
            run_ddim(shape, denoiser, s, &plan, cfg.eta, &mut rng)
        }
        SamplerKind::DpsYt | SamplerKind::DpsY0 => run_dps(y, model, denoiser, s, cfg, &mut rng),
    }
}

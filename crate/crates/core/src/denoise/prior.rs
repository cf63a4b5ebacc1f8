//! Analytic priors whose diffused marginals are known in closed form.
//!
//! Under `x_t = √ᾱ x0 + √(1 − ᾱ) ε`, a Gaussian prior `N(μ, s² I)` diffuses to
//! `N(√ᾱ μ, (ᾱ s² + 1 − ᾱ) I)`, and a mixture diffuses componentwise. A GMM is
//! a mixture over the whole image vector, not per pixel.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{predict_x0_from_score, Denoiser};
use crate::schedule::NoiseSchedule;
use crate::{Error, Image, Result};

/// Prior mean: one value for every pixel, or a full image.
#[derive(Clone, Debug, PartialEq)]
pub enum PriorMean {
    Scalar(f64),
    Image(Image),
}

impl PriorMean {
    fn check(&self, x: &Image) -> Result<()> {
        match self {
            PriorMean::Scalar(m) if m.is_finite() => Ok(()),
            PriorMean::Scalar(m) => Err(Error::range(format!("non-finite prior mean {m}"))),
            PriorMean::Image(m) => x.ensure_same_shape(m, "prior mean"),
        }
    }

    fn at(&self, i: usize) -> f64 {
        match self {
            PriorMean::Scalar(m) => *m,
            PriorMean::Image(m) => m.data()[i],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrior {
    pub mean: PriorMean,
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: PriorMean,
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmPrior {
    components: Vec<GmmComponent>,
}

fn check_variance(v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::range(format!("variance must be positive, got {v}")));
    }
    Ok(())
}

/// Gradient and log-density of one diffused Gaussian at `x`.
struct Diffused {
    grad: Vec<f64>,
    log_density: f64,
    var: f64,
}

fn diffused(mean: &PriorMean, variance: f64, x: &Image, alpha_bar: f64) -> Diffused {
    let sa = alpha_bar.sqrt();
    let var = alpha_bar * variance + (1.0 - alpha_bar);
    let mut sq = 0.0;
    let grad = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let d = v - sa * mean.at(i);
            sq += d * d;
            -d / var
        })
        .collect();
    let n = x.len() as f64;
    let log_density = -0.5 * sq / var - 0.5 * n * (2.0 * std::f64::consts::PI * var).ln();
    Diffused {
        grad,
        log_density,
        var,
    }
}

impl GaussianPrior {
    pub fn new(mean: PriorMean, variance: f64) -> Result<Self> {
        check_variance(variance)?;
        if let PriorMean::Scalar(m) = mean {
            if !m.is_finite() {
                return Err(Error::range("non-finite prior mean"));
            }
        }
        Ok(Self { mean, variance })
    }

    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        Self::new(PriorMean::Scalar(mean), variance)
    }

    /// `log p_t(x_t)` of the diffused marginal.
    pub fn log_density(&self, x_t: &Image, t: usize, s: &NoiseSchedule) -> Result<f64> {
        self.mean.check(x_t)?;
        Ok(diffused(&self.mean, self.variance, x_t, s.alpha_bar(t)?).log_density)
    }

    /// Draws from the prior itself (`t = 0`).
    pub fn sample<R: Rng + ?Sized>(
        &self,
        c: usize,
        h: usize,
        w: usize,
        rng: &mut R,
    ) -> Result<Image> {
        let z = Image::standard_normal(c, h, w, rng);
        self.mean.check(&z)?;
        let sd = self.variance.sqrt();
        let data = z
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| self.mean.at(i) + sd * v)
            .collect();
        Image::from_vec(c, h, w, data)
    }
}

/// `−(x_t − √ᾱ μ) / (ᾱ s² + 1 − ᾱ)`.
pub fn gaussian_score(
    prior: &GaussianPrior,
    x_t: &Image,
    t: usize,
    s: &NoiseSchedule,
) -> Result<Image> {
    prior.mean.check(x_t)?;
    let d = diffused(&prior.mean, prior.variance, x_t, s.alpha_bar(t)?);
    let (c, h, w) = x_t.shape();
    Image::from_vec(c, h, w, d.grad)
}

impl Denoiser for GaussianPrior {
    fn predict_x0(&mut self, x_t: &Image, t: usize, s: &NoiseSchedule) -> Result<Image> {
        let score = gaussian_score(self, x_t, t, s)?;
        predict_x0_from_score(x_t, &score, s.alpha_bar(t)?)
    }

    fn score(&mut self, x_t: &Image, t: usize, s: &NoiseSchedule) -> Option<Result<Image>> {
        Some(gaussian_score(self, x_t, t, s))
    }

    /// The Jacobian is the scalar `√ᾱ s² / (ᾱ s² + 1 − ᾱ)` times the identity.
    fn x0_vjp(&mut self, x_t: &Image, t: usize, s: &NoiseSchedule, v: &Image) -> Result<Image> {
        x_t.ensure_same_shape(v, "vjp direction")?;
        let ab = s.alpha_bar(t)?;
        let var = ab * self.variance + (1.0 - ab);
        Ok(v.scaled(ab.sqrt() * self.variance / var))
    }

    fn has_vjp(&self) -> bool {
        true
    }

    fn name(&self) -> String {
        "gaussian".into()
    }
}

/// Result of evaluating every diffused component at one point.
struct MixtureEval {
    parts: Vec<Diffused>,
    resp: Vec<f64>,
    log_density: f64,
}

impl GmmPrior {
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::range("mixture needs at least one component"));
        }
        for c in &components {
            check_variance(c.variance)?;
            if !(c.weight > 0.0) || !c.weight.is_finite() {
                return Err(Error::range(format!(
                    "mixture weight must be positive, got {}",
                    c.weight
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::range(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    fn eval(&self, x: &Image, alpha_bar: f64) -> Result<MixtureEval> {
        for c in &self.components {
            c.mean.check(x)?;
        }
        let parts: Vec<Diffused> = self
            .components
            .iter()
            .map(|c| diffused(&c.mean, c.variance, x, alpha_bar))
            .collect();
        let logits: Vec<f64> = parts
            .iter()
            .zip(&self.components)
            .map(|(p, c)| c.weight.ln() + p.log_density)
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        Ok(MixtureEval {
            resp: exps.iter().map(|e| e / z).collect(),
            log_density: m + z.ln(),
            parts,
        })
    }

    pub fn log_density(&self, x_t: &Image, t: usize, s: &NoiseSchedule) -> Result<f64> {
        Ok(self.eval(x_t, s.alpha_bar(t)?)?.log_density)
    }

    /// Posterior component probabilities at `x_t`.
    pub fn responsibilities(&self, x_t: &Image, t: usize, s: &NoiseSchedule) -> Result<Vec<f64>> {
        Ok(self.eval(x_t, s.alpha_bar(t)?)?.resp)
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        c: usize,
        h: usize,
        w: usize,
        rng: &mut R,
    ) -> Result<Image> {
        let weights = WeightedIndex::new(self.components.iter().map(|c| c.weight))
            .map_err(|e| Error::range(e.to_string()))?;
        let comp = &self.components[weights.sample(rng)];
        let data: Vec<f64> = (0..c * h * w)
            .map(|i| comp.mean.at(i) + comp.variance.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let img = Image::from_vec(c, h, w, data)?;
        comp.mean.check(&img)?;
        Ok(img)
    }
}

fn mixture_score(e: &MixtureEval) -> Vec<f64> {
    let mut acc: Vec<f64> = e.parts[0].grad.iter().map(|g| e.resp[0] * g).collect();
    for (p, r) in e.parts.iter().zip(&e.resp).skip(1) {
        for (a, g) in acc.iter_mut().zip(&p.grad) {
            *a += r * g;
        }
    }
    acc
}

/// Score of the diffused mixture, with log-sum-exp responsibilities.
pub fn gmm_score(prior: &GmmPrior, x_t: &Image, t: usize, s: &NoiseSchedule) -> Result<Image> {
    let e = prior.eval(x_t, s.alpha_bar(t)?)?;
    let (c, h, w) = x_t.shape();
    Image::from_vec(c, h, w, mixture_score(&e))
}

impl Denoiser for GmmPrior {
    fn predict_x0(&mut self, x_t: &Image, t: usize, s: &NoiseSchedule) -> Result<Image> {
        let score = gmm_score(self, x_t, t, s)?;
        predict_x0_from_score(x_t, &score, s.alpha_bar(t)?)
    }

    fn score(&mut self, x_t: &Image, t: usize, s: &NoiseSchedule) -> Option<Result<Image>> {
        Some(gmm_score(self, x_t, t, s))
    }

    /// `J = (I + (1 − ᾱ) ∇² log p) / √ᾱ` with
    /// `∇² log p = Σ r_k (g_k g_kᵀ − I / v_k) − g gᵀ`; `J` is symmetric.
    fn x0_vjp(&mut self, x_t: &Image, t: usize, s: &NoiseSchedule, v: &Image) -> Result<Image> {
        x_t.ensure_same_shape(v, "vjp direction")?;
        let ab = s.alpha_bar(t)?;
        let e = self.eval(x_t, ab)?;
        let g = mixture_score(&e);
        let dir = v.data();
        let dot = |a: &[f64]| a.iter().zip(dir).map(|(x, y)| x * y).sum::<f64>();
        let mut hv = vec![0.0; dir.len()];
        for (p, &r) in e.parts.iter().zip(&e.resp) {
            let gv = dot(&p.grad);
            for ((h, gk), d) in hv.iter_mut().zip(&p.grad).zip(dir) {
                *h += r * (gk * gv - d / p.var);
            }
        }
        let ggv = dot(&g);
        let sa = ab.sqrt();
        let out = hv
            .iter()
            .zip(&g)
            .zip(dir)
            .map(|((h, gi), d)| (d + (1.0 - ab) * (h - gi * ggv)) / sa)
            .collect();
        let (c, hh, w) = x_t.shape();
        Image::from_vec(c, hh, w, out)
    }

    fn has_vjp(&self) -> bool {
        true
    }

    fn name(&self) -> String {
        "gmm".into()
    }
}
